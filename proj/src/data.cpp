#include "lfednet/data.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <numeric>
#include <random>
#include <sstream>

namespace lfednet::data {

namespace chr = std::chrono;

namespace {

constexpr double kPi = 3.141592653589793;

chr::sys_days day_of(HourStamp hour) {
  return chr::sys_days{chr::days{hour >= 0 ? hour / 24 : (hour - 23) / 24}};
}

int hour_of_day(HourStamp hour) { return static_cast<int>(((hour % 24) + 24) % 24); }

HourStamp first_hour(chr::sys_days d) { return static_cast<HourStamp>(d.time_since_epoch().count()) * 24; }

int day_of_year(chr::sys_days d) {
  const chr::year_month_day ymd{d};
  return static_cast<int>((d - chr::sys_days{ymd.year() / chr::January / 1}).count());
}

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

double parse_number(const std::string& field, const std::string& what, const std::string& where) {
  const std::string f = trim(field);
  char* end = nullptr;
  const double v = std::strtod(f.c_str(), &end);
  if (f.empty() || end != f.c_str() + f.size() || !std::isfinite(v))
    throw DataError(where + ": cannot parse " + what + " '" + f + "'");
  return v;
}

/// AR(1) process with the given stationary standard deviation.
struct Ar1 {
  double rho;
  double innovation_sd;
  double value = 0.0;

  Ar1(double rho_, double stationary_sd) : rho(rho_), innovation_sd(stationary_sd * std::sqrt(1.0 - rho_ * rho_)) {}
  double step(double draw) { return value = rho * value + innovation_sd * draw; }
};

bool is_us_holiday(chr::sys_days d) {
  using namespace std::chrono;
  const year_month_day ymd{d};
  const year y = ymd.year();
  return d == sys_days{y / January / 1} || d == sys_days{y / May / Monday[last]} || d == sys_days{y / July / 4} ||
         d == sys_days{y / September / Monday[1]} || d == sys_days{y / November / Thursday[4]} ||
         d == sys_days{y / December / 25};
}

}  // namespace

std::string format_timestamp(HourStamp hour) {
  const chr::year_month_day ymd{day_of(hour)};
  char buf[32];
  std::snprintf(buf, sizeof buf, "%04d-%02u-%02uT%02d:00:00", static_cast<int>(ymd.year()),
                static_cast<unsigned>(ymd.month()), static_cast<unsigned>(ymd.day()), hour_of_day(hour));
  return buf;
}

HourStamp parse_timestamp(const std::string& text) {
  const std::string t = trim(text);
  int y = 0, mo = 0, d = 0, h = 0, mi = 0, s = 0;
  char sep = 0;
  int consumed = 0;
  const int n = std::sscanf(t.c_str(), "%4d-%2d-%2d%c%2d:%2d%n", &y, &mo, &d, &sep, &h, &mi, &consumed);
  if (n != 6 || (sep != 'T' && sep != ' ')) throw DataError("malformed timestamp '" + t + "'");
  std::size_t pos = static_cast<std::size_t>(consumed);
  if (pos < t.size()) {
    int more = 0;
    if (std::sscanf(t.c_str() + pos, ":%2d%n", &s, &more) != 1 || pos + static_cast<std::size_t>(more) != t.size())
      throw DataError("malformed timestamp '" + t + "'");
  }
  const chr::year_month_day ymd{chr::year{y}, chr::month{static_cast<unsigned>(mo)}, chr::day{static_cast<unsigned>(d)}};
  if (!ymd.ok() || h < 0 || h > 23) throw DataError("invalid date or hour in timestamp '" + t + "'");
  if (mi != 0 || s != 0) throw DataError("timestamp '" + t + "' is not on the hour");
  return first_hour(chr::sys_days{ymd}) + h;
}

std::vector<HourlyRecord> read_csv(std::istream& in, const std::string& source) {
  std::string line;
  if (!std::getline(in, line)) throw DataError(source + ": empty file");
  if (trim(line) != kCsvHeader) throw DataError(source + ": header must be '" + std::string(kCsvHeader) + "'");

  std::vector<HourlyRecord> out;
  std::size_t line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (trim(line).empty()) continue;
    const std::string where = source + ":" + std::to_string(line_no);
    std::vector<std::string> fields;
    std::stringstream ss(line);
    std::string f;
    while (std::getline(ss, f, ',')) fields.push_back(f);
    if (fields.size() != 5) throw DataError(where + ": expected 5 fields, found " + std::to_string(fields.size()));

    HourlyRecord r;
    try {
      r.hour = parse_timestamp(fields[0]);
    } catch (const DataError& e) {
      throw DataError(where + ": " + e.what());
    }
    r.load_mw = parse_number(fields[1], "load_mw", where);
    r.temp_actual_c = parse_number(fields[2], "temp_actual_c", where);
    r.temp_forecast_c = parse_number(fields[3], "temp_forecast_c", where);
    const std::string hol = trim(fields[4]);
    if (hol == "1" || hol == "true") r.is_holiday = true;
    else if (hol == "0" || hol == "false") r.is_holiday = false;
    else throw DataError(where + ": cannot parse is_holiday '" + hol + "'");
    if (r.load_mw < 0.0) throw DataError(where + ": negative load");

    if (!out.empty()) {
      const HourlyRecord& prev = out.back();
      if (r.hour == prev.hour) throw DataError(where + ": duplicated timestamp " + format_timestamp(r.hour));
      if (r.hour < prev.hour)
        throw DataError(where + ": timestamp " + format_timestamp(r.hour) + " is earlier than the previous row");
      const HourStamp missing = r.hour - prev.hour - 1;
      if (missing > kMaxGapHours)
        throw DataError(where + ": gap of " + std::to_string(missing) + " hours before " + format_timestamp(r.hour));
      for (HourStamp k = 1; k <= missing; ++k) {
        const double w = static_cast<double>(k) / static_cast<double>(missing + 1);
        HourlyRecord fill;
        fill.hour = prev.hour + k;
        fill.load_mw = (1.0 - w) * prev.load_mw + w * r.load_mw;
        fill.temp_actual_c = (1.0 - w) * prev.temp_actual_c + w * r.temp_actual_c;
        fill.temp_forecast_c = (1.0 - w) * prev.temp_forecast_c + w * r.temp_forecast_c;
        fill.is_holiday = day_of(fill.hour) == day_of(prev.hour) ? prev.is_holiday : r.is_holiday;
        out.push_back(fill);
      }
    }
    out.push_back(r);
  }
  return out;
}

std::vector<HourlyRecord> load_csv(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open data file " + path.string());
  return read_csv(in, path.string());
}

void write_csv(std::ostream& out, const std::vector<HourlyRecord>& records) {
  out << kCsvHeader << '\n';
  char buf[128];
  for (const auto& r : records) {
    std::snprintf(buf, sizeof buf, ",%.3f,%.2f,%.2f,%d\n", r.load_mw, r.temp_actual_c, r.temp_forecast_c,
                  r.is_holiday ? 1 : 0);
    out << format_timestamp(r.hour) << buf;
  }
}

void write_csv(const std::filesystem::path& path, const std::vector<HourlyRecord>& records) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot write " + path.string());
  write_csv(out, records);
  if (!out) throw DataError("write failed for " + path.string());
}

bool is_daylight_saving(HourStamp hour) {
  using namespace std::chrono;
  const sys_days d = day_of(hour);
  const year y = year_month_day{d}.year();
  return d >= sys_days{y / March / Sunday[2]} && d < sys_days{y / November / Sunday[1]};
}

std::size_t find_hour(const std::vector<HourlyRecord>& records, HourStamp hour) {
  const auto it = std::lower_bound(records.begin(), records.end(), hour,
                                   [](const HourlyRecord& r, HourStamp h) { return r.hour < h; });
  if (it == records.end() || it->hour != hour) throw DataError("no record at " + format_timestamp(hour));
  return static_cast<std::size_t>(it - records.begin());
}

TrainingExample build_features(const std::vector<HourlyRecord>& records, std::size_t target_start) {
  constexpr std::size_t kDay = kHoursPerDay;
  constexpr std::size_t kWeek = kHistoryDays * kDay;
  if (target_start >= records.size()) throw DataError("target index outside the records");
  const HourStamp t0 = records[target_start].hour;
  if (hour_of_day(t0) != 0) throw DataError("target day must start at 00:00, got " + format_timestamp(t0));
  if (target_start < kWeek || records[target_start - kWeek].hour != t0 - static_cast<HourStamp>(kWeek))
    throw DataError("insufficient history before " + format_timestamp(t0) + ": need 7 full days");
  if (target_start + kDay > records.size() || records[target_start + kDay - 1].hour != t0 + 23)
    throw DataError("target day starting " + format_timestamp(t0) + " is incomplete");

  using namespace feature;
  TrainingExample ex;
  ex.target = t0;
  ex.x = Vector::Zero(kDim);
  ex.y.resize(kHoursPerDay);
  double past_temp = 0.0;
  for (std::size_t h = 0; h < kDay; ++h) {
    const auto hi = static_cast<Eigen::Index>(h);
    ex.x[kPrevDayLoad + hi] = records[target_start - kDay + h].load_mw;
    ex.x[kPrevWeekLoad + hi] = records[target_start - kWeek + h].load_mw;
    past_temp += records[target_start - kDay + h].temp_actual_c;
    const double tf = records[target_start + h].temp_forecast_c;
    ex.x[kForecastTemp + hi] = tf;
    ex.x[kForecastTemp2 + hi] = tf * tf;
    ex.x[kForecastTemp3 + hi] = tf * tf * tf;
    ex.y[hi] = records[target_start + h].load_mw;
  }
  past_temp /= static_cast<double>(kDay);
  ex.x[kPastTemp] = past_temp;
  ex.x[kPastTemp + 1] = past_temp * past_temp;

  const chr::sys_days day = day_of(t0);
  const unsigned month = static_cast<unsigned>(chr::year_month_day{day}.month());
  ex.x[kSeason + static_cast<Eigen::Index>((month % 12) / 3)] = 1.0;
  ex.x[kHoliday] = records[target_start].is_holiday ? 1.0 : 0.0;
  const unsigned wd = chr::weekday{day}.c_encoding();
  ex.x[kWeekend] = (wd == 0 || wd == 6) ? 1.0 : 0.0;
  ex.x[kDaylightSaving] = is_daylight_saving(t0) ? 1.0 : 0.0;
  const double doy = day_of_year(day);
  const double h_year = doy * 24.0;
  ex.x[kHourOfYear] = std::sin(2.0 * kPi * h_year / (365.0 * 24.0));
  ex.x[kHourOfYear + 1] = std::cos(2.0 * kPi * h_year / (365.0 * 24.0));
  ex.x[kDayOfYear] = std::sin(2.0 * kPi * doy / 365.0);
  ex.x[kDayOfYear + 1] = std::cos(2.0 * kPi * doy / 365.0);
  return ex;
}

std::vector<TrainingExample> build_dataset(const std::vector<HourlyRecord>& records) {
  std::vector<TrainingExample> out;
  const std::size_t week = static_cast<std::size_t>(kHistoryDays) * kHoursPerDay;
  for (std::size_t i = week; i + kHoursPerDay <= records.size(); ++i) {
    if (hour_of_day(records[i].hour) != 0) continue;
    out.push_back(build_features(records, i));
  }
  return out;
}

ChannelStats compute_channel_stats(const Matrix& samples) {
  if (samples.cols() == 0) throw DataError("statistics of an empty sample set");
  ChannelStats s;
  s.mean = samples.rowwise().mean();
  s.std = ((samples.colwise() - s.mean).array().square().rowwise().sum() / static_cast<double>(samples.cols())).sqrt();
  for (Eigen::Index i = 0; i < s.std.size(); ++i)
    if (!(s.std[i] > 0.0)) throw DataError("channel " + std::to_string(i) + " has zero standard deviation");
  return s;
}

Matrix normalize(const Matrix& samples, const ChannelStats& stats) {
  if (samples.rows() != stats.mean.size()) throw DataError("sample dimension does not match the statistics");
  if ((stats.std.array() <= 0.0).any()) throw DataError("zero standard deviation channel");
  return (samples.colwise() - stats.mean).array().colwise() / stats.std.array();
}

Matrix denormalize(const Matrix& samples, const ChannelStats& stats) {
  if (samples.rows() != stats.mean.size()) throw DataError("sample dimension does not match the statistics");
  return (samples.array().colwise() * stats.std.array()).colwise() + stats.mean.array();
}

NormStats compute_norm_stats(const std::vector<TrainingExample>& train) {
  if (train.empty()) throw DataError("normalisation statistics need a non-empty training split");
  const auto n = static_cast<Eigen::Index>(train.size());
  Matrix y(kHoursPerDay, n), x(feature::kDim, n);
  for (Eigen::Index i = 0; i < n; ++i) {
    y.col(i) = train[static_cast<std::size_t>(i)].y;
    x.col(i) = train[static_cast<std::size_t>(i)].x;
  }
  NormStats s;
  const Eigen::Map<const Vector> all_loads(y.data(), y.size());
  const auto load = compute_channel_stats(all_loads.transpose());
  s.load_mean = load.mean[0];
  s.load_std = load.std[0];

  using namespace feature;
  s.features.mean = Vector::Zero(kDim);
  s.features.std = Vector::Ones(kDim);
  s.features.mean.head(kLoadEnd).setConstant(s.load_mean);
  s.features.std.head(kLoadEnd).setConstant(s.load_std);
  const auto temp = compute_channel_stats(x.middleRows(kLoadEnd, kCalendarBegin - kLoadEnd));
  s.features.mean.segment(kLoadEnd, kCalendarBegin - kLoadEnd) = temp.mean;
  s.features.std.segment(kLoadEnd, kCalendarBegin - kLoadEnd) = temp.std;
  return s;
}

TrainingExample normalize_example(const TrainingExample& ex, const NormStats& stats) {
  TrainingExample out;
  out.target = ex.target;
  out.x = normalize(ex.x, stats.features);
  out.y = (ex.y.array() - stats.load_mean) / stats.load_std;
  return out;
}

Vector denormalize_load(const Vector& y, const NormStats& stats) {
  return (y.array() * stats.load_std + stats.load_mean).matrix();
}

Vector denormalize_variance(const Vector& sigma2, const NormStats& stats) {
  return sigma2 * (stats.load_std * stats.load_std);
}

nlohmann::json norm_stats_to_json(const NormStats& stats) {
  const auto vec = [](const Vector& v) { return std::vector<double>(v.data(), v.data() + v.size()); };
  return {{"load_mean", stats.load_mean},
          {"load_std", stats.load_std},
          {"feature_mean", vec(stats.features.mean)},
          {"feature_std", vec(stats.features.std)}};
}

NormStats norm_stats_from_json(const nlohmann::json& j) {
  NormStats s;
  try {
    s.load_mean = j.at("load_mean").get<double>();
    s.load_std = j.at("load_std").get<double>();
    const auto mean = j.at("feature_mean").get<std::vector<double>>();
    const auto std = j.at("feature_std").get<std::vector<double>>();
    s.features.mean = Eigen::Map<const Vector>(mean.data(), static_cast<Eigen::Index>(mean.size()));
    s.features.std = Eigen::Map<const Vector>(std.data(), static_cast<Eigen::Index>(std.size()));
  } catch (const nlohmann::json::exception& e) {
    throw DataError(std::string("malformed normalisation statistics: ") + e.what());
  }
  if (s.features.mean.size() != feature::kDim || s.features.std.size() != feature::kDim)
    throw DataError("normalisation statistics have the wrong dimension");
  if (!(s.load_std > 0.0) || (s.features.std.array() <= 0.0).any())
    throw DataError("normalisation statistics contain a zero standard deviation");
  return s;
}

Split split(std::size_t n_examples, std::uint64_t seed) {
  if (n_examples < 10) throw DataError("split needs at least 10 examples, got " + std::to_string(n_examples));
  const std::size_t n_test = n_examples / 5;
  const std::size_t n_pool = n_examples - n_test;
  std::vector<std::size_t> pool(n_pool);
  std::iota(pool.begin(), pool.end(), std::size_t{0});
  std::mt19937_64 rng(seed);
  std::shuffle(pool.begin(), pool.end(), rng);
  const std::size_t n_val = n_pool / 5;
  Split s;
  s.train.assign(pool.begin(), pool.end() - static_cast<std::ptrdiff_t>(n_val));
  s.validation.assign(pool.end() - static_cast<std::ptrdiff_t>(n_val), pool.end());
  s.test.resize(n_test);
  std::iota(s.test.begin(), s.test.end(), n_pool);
  return s;
}

std::vector<HourlyRecord> synth_generate(std::uint64_t seed, int n_years, const SynthProfile& p) {
  if (n_years < 1) throw DataError("synthetic data needs at least one year");
  using namespace std::chrono;
  const sys_days begin{year{p.start_year} / January / 1};
  const sys_days end{year{p.start_year + n_years} / January / 1};

  std::mt19937_64 rng(seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  Ar1 anomaly(0.985, p.weather_anomaly_c);
  Ar1 forecast_error(0.9, p.forecast_error_c);
  Ar1 load_noise(0.8, p.load_noise_mw);

  std::vector<HourlyRecord> out;
  out.reserve(static_cast<std::size_t>((end - begin).count()) * kHoursPerDay);
  for (sys_days d = begin; d < end; d += days{1}) {
    const double doy = day_of_year(d);
    const unsigned wd = weekday{d}.c_encoding();
    const bool holiday = is_us_holiday(d);
    double week_factor = 1.0;
    if (wd == 6) week_factor = 1.0 - 0.8 * p.weekend_dip;
    if (wd == 0) week_factor = 1.0 - p.weekend_dip;
    const double year_factor = 1.0 + p.yearly_amplitude * std::cos(2.0 * kPi * doy / 365.25);
    const double seasonal_temp = 12.0 - 12.0 * std::cos(2.0 * kPi * (doy - 15.0) / 365.25);

    for (int h = 0; h < kHoursPerDay; ++h) {
      const double a = p.noise_scale * anomaly.step(normal(rng));
      const double e = p.noise_scale * forecast_error.step(normal(rng));
      const double n = p.noise_scale * load_noise.step(normal(rng));

      const double temp = seasonal_temp + 5.0 * std::sin(2.0 * kPi * (h - 9) / 24.0) + a;
      const double shape =
          1.0 + p.daily_amplitude * (0.8 * std::sin(2.0 * kPi * (h - 9) / 24.0) + 0.3 * std::sin(4.0 * kPi * (h - 3) / 24.0));
      const double hot = std::max(temp - 20.0, 0.0);
      const double cold = std::max(12.0 - temp, 0.0);
      const double weather = p.cooling_mw_per_c * hot * (1.0 + p.cooling_growth * hot) + p.heating_mw_per_c * cold;

      HourlyRecord r;
      r.hour = first_hour(d) + h;
      r.temp_actual_c = temp;
      r.temp_forecast_c = temp + e;
      r.is_holiday = holiday;
      r.load_mw = p.base_mw * shape * week_factor * year_factor * (holiday ? 1.0 - p.holiday_dip : 1.0) + weather + n;
      out.push_back(r);
    }
  }
  return out;
}

}  // namespace lfednet::data
