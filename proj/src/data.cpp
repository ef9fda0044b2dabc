#include "fdg2s/data.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <tuple>

namespace fdg2s::data {

namespace {

// --- civil date conversions (Howard Hinnant's algorithms) ---

std::int64_t days_from_civil(int y, int m, int d) {
    y -= m <= 2;
    const int era = (y >= 0 ? y : y - 399) / 400;
    const unsigned yoe = static_cast<unsigned>(y - era * 400);
    const unsigned doy = (153u * static_cast<unsigned>(m + (m > 2 ? -3 : 9)) + 2u) / 5u +
                         static_cast<unsigned>(d) - 1u;
    const unsigned doe = yoe * 365 + yoe / 4 - yoe / 100 + doy;
    return static_cast<std::int64_t>(era) * 146097 + static_cast<std::int64_t>(doe) - 719468;
}

void civil_from_days(std::int64_t z, int& y, int& m, int& d) {
    z += 719468;
    const std::int64_t era = (z >= 0 ? z : z - 146096) / 146097;
    const unsigned doe = static_cast<unsigned>(z - era * 146097);
    const unsigned yoe = (doe - doe / 1460 + doe / 36524 - doe / 146096) / 365;
    const std::int64_t yy = static_cast<std::int64_t>(yoe) + era * 400;
    const unsigned doy = doe - (365 * yoe + yoe / 4 - yoe / 100);
    const unsigned mp = (5 * doy + 2) / 153;
    d = static_cast<int>(doy - (153 * mp + 2) / 5 + 1);
    m = static_cast<int>(mp < 10 ? mp + 3 : mp - 9);
    y = static_cast<int>(yy + (m <= 2));
}

std::vector<std::string> split_csv_line(const std::string& line) {
    std::vector<std::string> out;
    std::string field;
    for (char c : line) {
        if (c == ',') {
            out.push_back(field);
            field.clear();
        } else if (c != '\r') {
            field += c;
        }
    }
    out.push_back(field);
    return out;
}

std::string trim(const std::string& s) {
    std::size_t b = s.find_first_not_of(" \t");
    if (b == std::string::npos) return "";
    std::size_t e = s.find_last_not_of(" \t");
    return s.substr(b, e - b + 1);
}

std::string format_double(double v) {
    char buf[40];
    std::snprintf(buf, sizeof(buf), "%.17g", v);
    return buf;
}

} // namespace

// =============================================================================
// Calendar
// =============================================================================

std::int64_t parse_iso_minutes(const std::string& ts) {
    int y = 0, mo = 0, d = 0, h = 0, mi = 0, s = 0;
    char sep = 0;
    int n = std::sscanf(ts.c_str(), "%d-%d-%d%c%d:%d:%d", &y, &mo, &d, &sep, &h, &mi, &s);
    if (n < 6 || (sep != 'T' && sep != ' '))
        throw Error(ErrorCode::InvalidConfig, "unparseable timestamp '" + ts + "'");
    if (n == 7 && s != 0)
        throw Error(ErrorCode::InvalidConfig, "sub-minute timestamp '" + ts + "'");
    return days_from_civil(y, mo, d) * 1440 + h * 60 + mi;
}

std::string format_iso_minutes(std::int64_t minutes) {
    std::int64_t days = minutes >= 0 ? minutes / 1440 : (minutes - 1439) / 1440;
    int rem = static_cast<int>(minutes - days * 1440);
    int y, m, d;
    civil_from_days(days, y, m, d);
    char buf[48];
    std::snprintf(buf, sizeof(buf), "%04d-%02d-%02dT%02d:%02d:00", y, m, d, rem / 60, rem % 60);
    return buf;
}

int day_of_week_from_minutes(std::int64_t minutes) {
    std::int64_t days = minutes >= 0 ? minutes / 1440 : (minutes - 1439) / 1440;
    // 1970-01-01 was a Thursday; Monday = 0.
    return static_cast<int>(((days % 7) + 7 + 3) % 7);
}

// =============================================================================
// MaskedSeries
// =============================================================================

MaskedSeries::MaskedSeries(int n_regions, int t_len, int interval_minutes,
                           std::int64_t start_epoch_minutes)
    : n_(n_regions), t_(t_len), interval_minutes_(interval_minutes),
      start_minutes_(start_epoch_minutes) {
    if (n_regions <= 0 || t_len <= 0 || interval_minutes <= 0)
        throw Error(ErrorCode::InvalidConfig, "non-positive series dimensions");
    if (1440 % interval_minutes != 0)
        throw Error(ErrorCode::InvalidConfig, "interval does not divide a day");
    t_d_ = 1440 / interval_minutes;
    if (t_len % t_d_ != 0)
        throw Error(ErrorCode::InvalidConfig, "series length is not a whole number of days");
    values_.assign(static_cast<std::size_t>(n_regions) * t_len, 0.0);
    mask_.assign(static_cast<std::size_t>(n_regions) * t_len, 0);
}

void MaskedSeries::check_index(int i, int t) const {
    if (i < 0 || i >= n_ || t < 0 || t >= t_)
        throw Error(ErrorCode::IndexOutOfRange,
                    "(" + std::to_string(i) + "," + std::to_string(t) + ")");
}

bool MaskedSeries::observed(int i, int t) const {
    check_index(i, t);
    return mask_[static_cast<std::size_t>(i) * t_ + t] != 0;
}

double MaskedSeries::value_at(int i, int t) const {
    check_index(i, t);
    std::size_t k = static_cast<std::size_t>(i) * t_ + t;
    if (!mask_[k])
        throw Error(ErrorCode::IndexOutOfRange,
                    "read of masked cell (" + std::to_string(i) + "," + std::to_string(t) + ")");
    return values_[k];
}

void MaskedSeries::set_value(int i, int t, double v) {
    check_index(i, t);
    std::size_t k = static_cast<std::size_t>(i) * t_ + t;
    values_[k] = v;
    mask_[k] = 1;
}

void MaskedSeries::mask_out(int i, int t) {
    check_index(i, t);
    mask_[static_cast<std::size_t>(i) * t_ + t] = 0;
}

bool MaskedSeries::window_observed(int t0, int t1) const {
    if (t0 < 0 || t1 > t_ || t0 >= t1) return false;
    for (int i = 0; i < n_; ++i)
        for (int t = t0; t < t1; ++t)
            if (!mask_[static_cast<std::size_t>(i) * t_ + t]) return false;
    return true;
}

std::int64_t MaskedSeries::observed_count() const {
    std::int64_t c = 0;
    for (auto m : mask_) c += m;
    return c;
}

double MaskedSeries::observed_mean() const {
    double s = 0.0;
    std::int64_t c = 0;
    for (std::size_t k = 0; k < values_.size(); ++k)
        if (mask_[k]) {
            s += values_[k];
            ++c;
        }
    return c ? s / static_cast<double>(c) : 0.0;
}

double MaskedSeries::observed_std() const {
    double mean = observed_mean();
    double s = 0.0;
    std::int64_t c = 0;
    for (std::size_t k = 0; k < values_.size(); ++k)
        if (mask_[k]) {
            double d = values_[k] - mean;
            s += d * d;
            ++c;
        }
    return c ? std::sqrt(s / static_cast<double>(c)) : 0.0;
}

void MaskedSeries::save_csv(const std::string& path) const {
    std::ofstream out(path);
    if (!out) throw Error(ErrorCode::InvalidConfig, "cannot write " + path);
    out << "timestamp";
    for (int i = 0; i < n_; ++i) out << ",r" << i;
    out << "\n";
    for (int t = 0; t < t_; ++t) {
        out << format_iso_minutes(start_minutes_ + static_cast<std::int64_t>(t) * interval_minutes_);
        for (int i = 0; i < n_; ++i) {
            out << ",";
            std::size_t k = static_cast<std::size_t>(i) * t_ + t;
            if (mask_[k]) out << format_double(values_[k]);
        }
        out << "\n";
    }
}

// =============================================================================
// Observation ingestion
// =============================================================================

namespace {

struct RawCsv {
    std::vector<std::string> header;
    std::vector<std::vector<std::string>> rows;
};

RawCsv read_csv(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw Error(ErrorCode::EmptyFile, "cannot open " + path);
    RawCsv csv;
    std::string line;
    if (!std::getline(in, line)) throw Error(ErrorCode::EmptyFile, path + " has no header");
    csv.header = split_csv_line(line);
    for (auto& h : csv.header) h = trim(h);
    while (std::getline(in, line)) {
        if (trim(line).empty()) continue;
        csv.rows.push_back(split_csv_line(line));
    }
    if (csv.rows.empty()) throw Error(ErrorCode::EmptyFile, path + " has no data rows");
    return csv;
}

int find_column(const RawCsv& csv, const std::string& name) {
    for (std::size_t k = 0; k < csv.header.size(); ++k)
        if (csv.header[k] == name) return static_cast<int>(k);
    return -1;
}

// Validates fixed stride over a strictly increasing timestamp sequence and
// returns the stride in minutes.
int infer_stride(const std::vector<std::int64_t>& ts) {
    if (ts.size() < 2)
        throw Error(ErrorCode::IrregularStride, "need at least two timestamps to infer stride");
    std::int64_t stride = ts[1] - ts[0];
    if (stride <= 0) throw Error(ErrorCode::IrregularStride, "timestamps not strictly increasing");
    for (std::size_t k = 2; k < ts.size(); ++k)
        if (ts[k] - ts[k - 1] != stride)
            throw Error(ErrorCode::IrregularStride,
                        "gap of " + std::to_string(ts[k] - ts[k - 1]) + " min after " +
                            format_iso_minutes(ts[k - 1]) + ", expected " + std::to_string(stride));
    return static_cast<int>(stride);
}

} // namespace

MaskedSeries load_observations(const std::string& path, const CsvSchema& schema) {
    RawCsv csv = read_csv(path);

    CsvSchema::Layout layout = schema.layout;
    if (layout == CsvSchema::Layout::Auto) {
        bool is_long = find_column(csv, schema.region_column) >= 0 &&
                       find_column(csv, schema.value_column) >= 0;
        layout = is_long ? CsvSchema::Layout::Long : CsvSchema::Layout::Wide;
    }

    int ts_col = find_column(csv, schema.timestamp_column);
    if (ts_col < 0) throw Error(ErrorCode::InvalidConfig, "missing timestamp column in " + path);

    if (layout == CsvSchema::Layout::Wide) {
        std::vector<std::int64_t> ts;
        ts.reserve(csv.rows.size());
        for (const auto& row : csv.rows) ts.push_back(parse_iso_minutes(row[ts_col]));
        int stride = infer_stride(ts);
        int n = static_cast<int>(csv.header.size()) - 1;
        if (n <= 0) throw Error(ErrorCode::InvalidConfig, "wide layout needs region columns");
        MaskedSeries series(n, static_cast<int>(csv.rows.size()), stride, ts[0]);
        for (int t = 0; t < series.t_len(); ++t) {
            const auto& row = csv.rows[t];
            if (static_cast<int>(row.size()) != n + 1)
                throw Error(ErrorCode::InvalidConfig, "ragged row at " + format_iso_minutes(ts[t]));
            int col = 0;
            for (int k = 0; k < static_cast<int>(row.size()); ++k) {
                if (k == ts_col) continue;
                std::string field = trim(row[k]);
                if (!field.empty()) series.set_value(col, t, std::stod(field));
                ++col;
            }
        }
        return series;
    }

    // long layout
    int region_col = find_column(csv, schema.region_column);
    int value_col = find_column(csv, schema.value_column);
    std::vector<std::int64_t> ts_order;
    std::vector<std::tuple<std::int64_t, int, std::string>> cells;
    int max_region = -1;
    for (const auto& row : csv.rows) {
        std::int64_t ts = parse_iso_minutes(row[ts_col]);
        if (ts_order.empty() || ts_order.back() < ts)
            ts_order.push_back(ts);
        else if (ts_order.back() > ts)
            throw Error(ErrorCode::IrregularStride, "timestamps not non-decreasing");
        std::string rid = trim(row[region_col]);
        std::size_t pos = 0;
        int region = -1;
        try {
            region = std::stoi(rid, &pos);
        } catch (...) {
            throw Error(ErrorCode::UnknownRegion, "'" + rid + "'");
        }
        if (pos != rid.size() || region < 0) throw Error(ErrorCode::UnknownRegion, "'" + rid + "'");
        if (schema.n_regions > 0 && region >= schema.n_regions)
            throw Error(ErrorCode::UnknownRegion, "region " + rid + " out of declared range");
        max_region = std::max(max_region, region);
        cells.emplace_back(ts, region, trim(row[value_col]));
    }
    int stride = infer_stride(ts_order);
    int n = schema.n_regions > 0 ? schema.n_regions : max_region + 1;
    MaskedSeries series(n, static_cast<int>(ts_order.size()), stride, ts_order[0]);
    for (const auto& [ts, region, field] : cells) {
        int t = static_cast<int>((ts - ts_order[0]) / stride);
        if (!field.empty()) series.set_value(region, t, std::stod(field));
    }
    return series;
}

// =============================================================================
// FactorFrame
// =============================================================================

FactorFrame::FactorFrame(int n_regions, int capacity, int t_d, int start_day_of_week,
                         int start_slot, int weather_types, int numeric_dim, int embed_dim,
                         std::uint64_t embed_seed)
    : n_(n_regions), capacity_(capacity), t_d_(t_d), start_dow_(start_day_of_week),
      start_slot_(start_slot), weather_types_(weather_types), numeric_dim_(numeric_dim),
      embed_dim_(embed_dim),
      weather_type_(static_cast<std::size_t>(n_regions) * capacity, -1),
      numeric_raw_(static_cast<std::size_t>(n_regions) * capacity * numeric_dim, 0.0),
      z_mean_(numeric_dim, 0.0), z_std_(numeric_dim, 1.0) {
    if (n_regions <= 0 || capacity <= 0 || t_d <= 0 || weather_types <= 0 || embed_dim <= 0)
        throw Error(ErrorCode::InvalidConfig, "non-positive factor-frame dimensions");
    Rng rng(embed_seed);
    embeddings_ =
        ad::Tensor({static_cast<std::size_t>(n_regions), static_cast<std::size_t>(embed_dim)});
    double scale = 1.0 / std::sqrt(static_cast<double>(embed_dim));
    for (std::size_t k = 0; k < embeddings_.size(); ++k)
        embeddings_.at(k) = rng.uniform(-scale, scale);
}

int FactorFrame::day_of_week(int t) const {
    if (t < 0) throw Error(ErrorCode::IndexOutOfRange, "t=" + std::to_string(t));
    return (start_dow_ + (start_slot_ + t) / t_d_) % 7;
}

int FactorFrame::daily_slot(int t) const {
    if (t < 0) throw Error(ErrorCode::IndexOutOfRange, "t=" + std::to_string(t));
    return (start_slot_ + t) % t_d_;
}

bool FactorFrame::weather_known(int i, int t) const {
    if (i < 0 || i >= n_ || t < 0 || t >= capacity_) return false;
    return weather_type_[static_cast<std::size_t>(i) * capacity_ + t] >= 0;
}

int FactorFrame::weather_type(int i, int t) const {
    if (i < 0 || i >= n_ || t < 0 || t >= capacity_)
        throw Error(ErrorCode::IndexOutOfRange,
                    "(" + std::to_string(i) + "," + std::to_string(t) + ")");
    int w = weather_type_[static_cast<std::size_t>(i) * capacity_ + t];
    if (w < 0)
        throw Error(ErrorCode::MissingExpectedFactors,
                    "weather unknown at (" + std::to_string(i) + "," + std::to_string(t) + ")");
    return w;
}

std::vector<double> FactorFrame::numeric_weather_raw(int i, int t) const {
    (void)weather_type(i, t); // validates coverage
    const double* raw =
        numeric_raw_.data() + (static_cast<std::size_t>(i) * capacity_ + t) * numeric_dim_;
    return std::vector<double>(raw, raw + numeric_dim_);
}

std::vector<double> FactorFrame::numeric_weather(int i, int t) const {
    std::vector<double> out = numeric_weather_raw(i, t);
    for (int d = 0; d < numeric_dim_; ++d) out[d] = (out[d] - z_mean_[d]) / z_std_[d];
    return out;
}

double FactorFrame::numeric_summary(int i, int t) const {
    auto z = numeric_weather(i, t);
    double s = 0.0;
    for (double v : z) s += v;
    return z.empty() ? 0.0 : s / static_cast<double>(z.size());
}

void FactorFrame::set_weather(int i, int t, int type, const std::vector<double>& numeric_raw) {
    if (i < 0 || i >= n_ || t < 0 || t >= capacity_)
        throw Error(ErrorCode::IndexOutOfRange,
                    "(" + std::to_string(i) + "," + std::to_string(t) + ")");
    if (type < 0 || type >= weather_types_)
        throw Error(ErrorCode::InvalidConfig, "weather type " + std::to_string(type));
    if (static_cast<int>(numeric_raw.size()) != numeric_dim_)
        throw Error(ErrorCode::WidthMismatch, "numeric weather width");
    weather_type_[static_cast<std::size_t>(i) * capacity_ + t] = type;
    double* dst =
        numeric_raw_.data() + (static_cast<std::size_t>(i) * capacity_ + t) * numeric_dim_;
    for (int d = 0; d < numeric_dim_; ++d) dst[d] = numeric_raw[d];
}

void FactorFrame::set_weather_all_regions(int t, int type, const std::vector<double>& numeric_raw) {
    for (int i = 0; i < n_; ++i) set_weather(i, t, type, numeric_raw);
}

void FactorFrame::fit_numeric_stats(int t_fit) {
    for (int d = 0; d < numeric_dim_; ++d) {
        double s = 0.0, s2 = 0.0;
        std::int64_t c = 0;
        for (int i = 0; i < n_; ++i)
            for (int t = 0; t < std::min(t_fit, capacity_); ++t) {
                if (weather_type_[static_cast<std::size_t>(i) * capacity_ + t] < 0) continue;
                double v =
                    numeric_raw_[(static_cast<std::size_t>(i) * capacity_ + t) * numeric_dim_ + d];
                s += v;
                s2 += v * v;
                ++c;
            }
        if (c == 0) {
            z_mean_[d] = 0.0;
            z_std_[d] = 1.0;
            continue;
        }
        double mean = s / static_cast<double>(c);
        double var = std::max(0.0, s2 / static_cast<double>(c) - mean * mean);
        z_mean_[d] = mean;
        z_std_[d] = var > 1e-12 ? std::sqrt(var) : 1.0;
    }
}

int FactorFrame::encoded_width() const {
    return kDowWidth + kSlotWidth + weather_types_ + numeric_dim_ + embed_dim_;
}

std::vector<int> FactorFrame::segment_widths() const {
    return {kDowWidth, kSlotWidth, weather_types_, numeric_dim_, embed_dim_};
}

FactorFrame::Encoding FactorFrame::encode(int i, int t) const {
    if (i < 0 || i >= n_ || t < 0 || t >= capacity_)
        throw Error(ErrorCode::IndexOutOfRange,
                    "(" + std::to_string(i) + "," + std::to_string(t) + ")");
    Encoding enc;
    enc.values.reserve(encoded_width());
    auto push_segment = [&](int width) {
        int offset = static_cast<int>(enc.values.size()) - width;
        enc.segments.emplace_back(offset, width);
    };

    int dow = day_of_week(t);
    for (int k = 0; k < kDowWidth; ++k) enc.values.push_back(k == dow ? 1.0 : 0.0);
    push_segment(kDowWidth);

    double slot_frac = static_cast<double>(daily_slot(t)) / static_cast<double>(t_d_);
    enc.values.push_back(slot_frac);
    enc.values.push_back(std::sin(2.0 * M_PI * slot_frac));
    enc.values.push_back(std::cos(2.0 * M_PI * slot_frac));
    push_segment(kSlotWidth);

    int w = weather_type(i, t);
    for (int k = 0; k < weather_types_; ++k) enc.values.push_back(k == w ? 1.0 : 0.0);
    push_segment(weather_types_);

    for (double v : numeric_weather(i, t)) enc.values.push_back(v);
    push_segment(numeric_dim_);

    for (int d = 0; d < embed_dim_; ++d)
        enc.values.push_back(
            embeddings_.at(static_cast<std::size_t>(i), static_cast<std::size_t>(d)));
    push_segment(embed_dim_);
    return enc;
}

nlohmann::json FactorFrame::to_json() const {
    nlohmann::json j;
    j["n_regions"] = n_;
    j["capacity"] = capacity_;
    j["t_d"] = t_d_;
    j["start_dow"] = start_dow_;
    j["start_slot"] = start_slot_;
    j["weather_types"] = weather_types_;
    j["numeric_dim"] = numeric_dim_;
    j["embed_dim"] = embed_dim_;
    j["weather_type"] = weather_type_;
    j["numeric_raw"] = numeric_raw_;
    j["z_mean"] = z_mean_;
    j["z_std"] = z_std_;
    j["embeddings"] = embeddings_.values();
    return j;
}

FactorFrame FactorFrame::from_json(const nlohmann::json& j) {
    FactorFrame f(j.at("n_regions").get<int>(), j.at("capacity").get<int>(), j.at("t_d").get<int>(),
                  j.at("start_dow").get<int>(), j.at("start_slot").get<int>(),
                  j.at("weather_types").get<int>(), j.at("numeric_dim").get<int>(),
                  j.at("embed_dim").get<int>(), 0);
    f.weather_type_ = j.at("weather_type").get<std::vector<int>>();
    f.numeric_raw_ = j.at("numeric_raw").get<std::vector<double>>();
    f.z_mean_ = j.at("z_mean").get<std::vector<double>>();
    f.z_std_ = j.at("z_std").get<std::vector<double>>();
    f.embeddings_ =
        ad::Tensor({static_cast<std::size_t>(f.n_), static_cast<std::size_t>(f.embed_dim_)},
                   j.at("embeddings").get<std::vector<double>>());
    return f;
}

FactorFrame load_factors(const std::string& weather_csv_path, const MaskedSeries& series,
                         int weather_types, int embed_dim, std::uint64_t embed_seed,
                         int fill_limit_minutes, int future_capacity) {
    RawCsv csv = read_csv(weather_csv_path);
    int ts_col = find_column(csv, "timestamp");
    int region_col = find_column(csv, "region_id");
    int type_col = find_column(csv, "weather_type");
    int temp_col = find_column(csv, "temp");
    int precip_col = find_column(csv, "precip");
    if (ts_col < 0 || region_col < 0 || type_col < 0 || temp_col < 0 || precip_col < 0)
        throw Error(ErrorCode::InvalidConfig, "weather CSV missing required columns");

    int capacity = std::max(series.t_len(), future_capacity);
    int start_slot = static_cast<int>((series.start_epoch_minutes() / series.interval_minutes()) %
                                      series.intervals_per_day());
    FactorFrame frame(series.n_regions(), capacity, series.intervals_per_day(),
                      day_of_week_from_minutes(series.start_epoch_minutes()), start_slot,
                      weather_types, 2, embed_dim, embed_seed);

    struct Row {
        std::int64_t ts;
        int region; // -1 = city-wide
        int type;
        std::vector<double> numeric;
    };
    std::vector<Row> rows;
    rows.reserve(csv.rows.size());
    for (const auto& r : csv.rows) {
        Row row;
        row.ts = parse_iso_minutes(r[ts_col]);
        std::string rid = trim(r[region_col]);
        if (rid == "*" || rid.empty()) {
            row.region = -1;
        } else {
            try {
                row.region = std::stoi(rid);
            } catch (...) {
                throw Error(ErrorCode::UnknownRegion, "'" + rid + "'");
            }
            if (row.region < 0 || row.region >= series.n_regions())
                throw Error(ErrorCode::UnknownRegion, "region " + rid);
        }
        row.type = std::stoi(trim(r[type_col]));
        if (row.type < 0 || row.type >= weather_types)
            throw Error(ErrorCode::InvalidConfig, "weather type out of range: " + trim(r[type_col]));
        row.numeric = {std::stod(trim(r[temp_col])), std::stod(trim(r[precip_col]))};
        rows.push_back(std::move(row));
    }
    std::stable_sort(rows.begin(), rows.end(),
                     [](const Row& a, const Row& b) { return a.ts < b.ts; });

    // Forward fill per region; coverage is mandatory over the observed series
    // range, optional beyond it (expected factors for prediction).
    std::int64_t start = series.start_epoch_minutes();
    int stride = series.interval_minutes();
    for (int i = 0; i < series.n_regions(); ++i) {
        std::size_t next_row = 0;
        std::optional<Row> last;
        for (int t = 0; t < capacity; ++t) {
            std::int64_t t_minutes = start + static_cast<std::int64_t>(t) * stride;
            while (next_row < rows.size() && rows[next_row].ts <= t_minutes) {
                if (rows[next_row].region == -1 || rows[next_row].region == i)
                    last = rows[next_row];
                ++next_row;
            }
            if (last && t_minutes - last->ts <= fill_limit_minutes)
                frame.set_weather(i, t, last->type, last->numeric);
            else if (t < series.t_len())
                throw Error(ErrorCode::MissingWeatherCoverage,
                            "no weather within " + std::to_string(fill_limit_minutes) +
                                " min of " + format_iso_minutes(t_minutes) + " for region " +
                                std::to_string(i));
        }
    }
    frame.fit_numeric_stats(series.t_len());
    return frame;
}

// =============================================================================
// Graph
// =============================================================================

void Graph::validate() const {
    if (n_nodes <= 0) throw Error(ErrorCode::InvalidConfig, "graph has no nodes");
    for (const auto& e : edges) {
        if (e.i == e.j)
            throw Error(ErrorCode::InvalidConfig, "self-loop at node " + std::to_string(e.i));
        if (e.i < 0 || e.i >= n_nodes || e.j < 0 || e.j >= n_nodes)
            throw Error(ErrorCode::InvalidConfig, "edge endpoint out of range");
        if (e.weight < 0) throw Error(ErrorCode::InvalidConfig, "negative edge weight");
    }
    if (!coords.empty() && static_cast<int>(coords.size()) != n_nodes)
        throw Error(ErrorCode::InvalidConfig, "coords size mismatch");
}

nlohmann::json Graph::to_json() const {
    nlohmann::json j;
    j["n_nodes"] = n_nodes;
    nlohmann::json edge_list = nlohmann::json::array();
    for (const auto& e : edges) edge_list.push_back({e.i, e.j, e.weight});
    j["edges"] = edge_list;
    nlohmann::json coord_list = nlohmann::json::array();
    for (const auto& c : coords) coord_list.push_back({c[0], c[1]});
    j["coords"] = coord_list;
    return j;
}

Graph Graph::from_json(const nlohmann::json& j) {
    Graph g;
    g.n_nodes = j.at("n_nodes").get<int>();
    for (const auto& e : j.at("edges"))
        g.edges.push_back({e[0].get<int>(), e[1].get<int>(), e[2].get<double>()});
    for (const auto& c : j.at("coords"))
        g.coords.push_back({c[0].get<double>(), c[1].get<double>()});
    g.validate();
    return g;
}

// =============================================================================
// Scenario
// =============================================================================

std::string Scenario::name() const {
    if (kind == Kind::EarlyPlanning) return std::to_string(days) + "-day-ahead";
    return std::to_string(days) + "-day-missing";
}

MaskedSeries apply_scenario(const MaskedSeries& series, const Scenario& scenario) {
    int t_d = series.intervals_per_day();
    if (scenario.days < 1 || scenario.days > 30)
        throw Error(ErrorCode::GapSpanViolation,
                    "gap of " + std::to_string(scenario.days) + " days outside [1, 30]");
    int gap_end, gap_start;
    if (scenario.kind == Scenario::Kind::EarlyPlanning) {
        gap_end = scenario.target_start;
        gap_start = gap_end - scenario.days * t_d;
    } else {
        gap_end = scenario.target_start - Scenario::kNearestObservedDays * t_d;
        gap_start = gap_end - scenario.days * t_d;
    }
    if (gap_start < 0 || gap_end > series.t_len() || scenario.target_start > series.t_len())
        throw Error(ErrorCode::GapOutOfBounds, "gap [" + std::to_string(gap_start) + "," +
                                                   std::to_string(gap_end) + ") outside data range");
    MaskedSeries out = series;
    for (int i = 0; i < series.n_regions(); ++i)
        for (int t = gap_start; t < gap_end; ++t) out.mask_out(i, t);
    return out;
}

// =============================================================================
// Synthetic generation
// =============================================================================

void SynthConfig::validate() const {
    if (n_regions <= 0 || days <= 0 || t_d <= 0)
        throw Error(ErrorCode::InvalidConfig, "non-positive synthetic dimensions");
    if (1440 % t_d != 0) throw Error(ErrorCode::InvalidConfig, "t_d must divide 1440");
    if (weather_probs.empty() || weather_probs.size() != weather_multipliers.size())
        throw Error(ErrorCode::InvalidConfig, "weather probs/multipliers size mismatch");
    double sum = 0.0;
    for (double p : weather_probs) {
        if (p < 0) throw Error(ErrorCode::InvalidConfig, "negative weather probability");
        sum += p;
    }
    if (std::fabs(sum - 1.0) > 1e-9)
        throw Error(ErrorCode::InvalidConfig, "weather probabilities must sum to 1");
    if (sigma < 0 || base_min <= 0 || base_max < base_min)
        throw Error(ErrorCode::InvalidConfig, "invalid noise/base configuration");
    if (weather_persistence < 0 || weather_persistence >= 1)
        throw Error(ErrorCode::InvalidConfig, "weather persistence must be in [0, 1)");
    if (embed_dim <= 0) throw Error(ErrorCode::InvalidConfig, "embed_dim must be positive");
}

namespace {

double gauss_bump(double s, double center, double width) {
    double d = s - center;
    return std::exp(-d * d / (2.0 * width * width));
}

double weekly_profile_value(int dow, int slot, int t_d) {
    double s = static_cast<double>(slot) / static_cast<double>(t_d);
    if (dow < 5)
        return 0.45 + 0.85 * gauss_bump(s, 8.0 / 24.0, 0.06) +
               0.75 * gauss_bump(s, 18.5 / 24.0, 0.08);
    return 0.55 + 0.65 * gauss_bump(s, 13.0 / 24.0, 0.12);
}

} // namespace

SyntheticData generate_synthetic(const SynthConfig& config, std::uint64_t seed) {
    config.validate();
    Rng root(seed);
    Rng base_rng = root.fork(1);
    Rng weather_rng = root.fork(2);
    Rng numeric_rng = root.fork(3);
    Rng noise_rng = root.fork(4);
    Rng graph_rng = root.fork(5);
    std::uint64_t embed_seed = root.fork(6).next_u64();

    int w_count = static_cast<int>(config.weather_probs.size());
    int t_len = config.days * config.t_d;
    int capacity = (config.days + 1) * config.t_d; // one extra day of expected weather
    std::int64_t start_minutes = parse_iso_minutes(config.start_date);
    int interval_minutes = 1440 / config.t_d;

    GroundTruthParams truth;
    truth.weather_multipliers = config.weather_multipliers;
    truth.weather_probs = config.weather_probs;
    truth.sigma = config.sigma;
    truth.t_d = config.t_d;
    truth.weekly_profile.resize(7 * config.t_d);
    for (int d = 0; d < 7; ++d)
        for (int s = 0; s < config.t_d; ++s)
            truth.weekly_profile[d * config.t_d + s] = weekly_profile_value(d, s, config.t_d);

    truth.base.resize(config.n_regions);
    for (int i = 0; i < config.n_regions; ++i)
        truth.base[i] = base_rng.uniform(config.base_min, config.base_max);

    // City-wide weather, drawn per block.
    int block = config.weather_block_intervals > 0 ? config.weather_block_intervals : config.t_d;
    truth.interval_weather.resize(capacity);
    int current = 0;
    for (int t = 0; t < capacity; ++t) {
        if (t % block == 0) {
            bool repeat = t > 0 && weather_rng.uniform() < config.weather_persistence;
            if (!repeat) {
                double u = weather_rng.uniform();
                double acc = 0.0;
                current = w_count - 1;
                for (int w = 0; w < w_count; ++w) {
                    acc += config.weather_probs[w];
                    if (u < acc) {
                        current = w;
                        break;
                    }
                }
            }
        }
        truth.interval_weather[t] = current;
    }

    int start_dow = day_of_week_from_minutes(start_minutes);
    FactorFrame factors(config.n_regions, capacity, config.t_d, start_dow, 0, w_count, 2,
                        config.embed_dim, embed_seed);
    std::vector<double> type_temp = {22.0, 14.0, 10.0, 7.0};
    std::vector<double> type_precip = {0.0, 4.0, 1.0, 9.0};
    type_temp.resize(w_count, 15.0);
    type_precip.resize(w_count, 2.0);
    for (int t = 0; t < capacity; ++t) {
        int w = truth.interval_weather[t];
        std::vector<double> numeric = {type_temp[w] + 1.5 * numeric_rng.gaussian(),
                                       std::max(0.0, type_precip[w] + 0.5 * numeric_rng.gaussian())};
        factors.set_weather_all_regions(t, w, numeric);
    }
    factors.fit_numeric_stats(t_len);

    MaskedSeries series(config.n_regions, t_len, interval_minutes, start_minutes);
    for (int t = 0; t < t_len; ++t) {
        int dow = factors.day_of_week(t);
        int slot = factors.daily_slot(t);
        double mult = config.weather_multipliers[truth.interval_weather[t]];
        for (int i = 0; i < config.n_regions; ++i) {
            double v = truth.base[i] * truth.profile(dow, slot) * mult *
                       (1.0 + config.sigma * noise_rng.gaussian());
            series.set_value(i, t, std::max(0.0, v));
        }
    }

    Graph graph;
    graph.n_nodes = config.n_regions;
    graph.coords.resize(config.n_regions);
    for (int i = 0; i < config.n_regions; ++i)
        graph.coords[i] = {graph_rng.uniform(), graph_rng.uniform()};
    for (int i = 0; i < config.n_regions; ++i) {
        std::vector<std::pair<double, int>> dist;
        for (int j = 0; j < config.n_regions; ++j) {
            if (j == i) continue;
            double dx = graph.coords[i][0] - graph.coords[j][0];
            double dy = graph.coords[i][1] - graph.coords[j][1];
            dist.emplace_back(std::sqrt(dx * dx + dy * dy), j);
        }
        std::sort(dist.begin(), dist.end());
        for (int k = 0; k < std::min<int>(3, static_cast<int>(dist.size())); ++k) {
            int j = dist[k].second;
            int a = std::min(i, j), b = std::max(i, j);
            bool dup = std::any_of(graph.edges.begin(), graph.edges.end(),
                                   [&](const Graph::Edge& e) { return e.i == a && e.j == b; });
            if (!dup) graph.edges.push_back({a, b, 1.0 / (1.0 + dist[k].first)});
        }
    }
    graph.validate();

    return SyntheticData{std::move(series), std::move(factors), std::move(graph), std::move(truth)};
}

nlohmann::json GroundTruthParams::to_json() const {
    nlohmann::json j;
    j["base"] = base;
    j["weather_multipliers"] = weather_multipliers;
    j["weather_probs"] = weather_probs;
    j["sigma"] = sigma;
    j["weekly_profile"] = weekly_profile;
    j["interval_weather"] = interval_weather;
    j["t_d"] = t_d;
    return j;
}

GroundTruthParams GroundTruthParams::from_json(const nlohmann::json& j) {
    GroundTruthParams t;
    t.base = j.at("base").get<std::vector<double>>();
    t.weather_multipliers = j.at("weather_multipliers").get<std::vector<double>>();
    t.weather_probs = j.at("weather_probs").get<std::vector<double>>();
    t.sigma = j.at("sigma").get<double>();
    t.weekly_profile = j.at("weekly_profile").get<std::vector<double>>();
    t.interval_weather = j.at("interval_weather").get<std::vector<int>>();
    t.t_d = j.at("t_d").get<int>();
    return t;
}

void save_synthetic(const SyntheticData& data, const std::string& dir) {
    std::filesystem::create_directories(dir);
    data.series.save_csv(dir + "/observations.csv");

    std::ofstream weather(dir + "/weather.csv");
    if (!weather) throw Error(ErrorCode::InvalidConfig, "cannot write weather.csv");
    weather << "timestamp,region_id,weather_type,temp,precip\n";
    // Generator weather is city-wide; region 0 carries the raw record.
    const FactorFrame& f = data.factors;
    for (int t = 0; t < f.capacity(); ++t) {
        std::int64_t ts = data.series.start_epoch_minutes() +
                          static_cast<std::int64_t>(t) * data.series.interval_minutes();
        auto raw = f.numeric_weather_raw(0, t);
        weather << format_iso_minutes(ts) << ",*," << data.truth.interval_weather[t] << ","
                << format_double(raw[0]) << "," << format_double(raw[1]) << "\n";
    }

    std::ofstream graph(dir + "/graph.json");
    graph << data.graph.to_json().dump(2) << "\n";
    std::ofstream truth(dir + "/ground_truth.json");
    truth << data.truth.to_json().dump(2) << "\n";
}

} // namespace fdg2s::data
