#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "lfednet/data.hpp"
#include "test_support.hpp"

#include <set>
#include <sstream>

using namespace lfednet;
using namespace lfednet::data;

namespace {

std::string to_csv(const std::vector<HourlyRecord>& recs) {
  std::ostringstream os;
  write_csv(os, recs);
  return os.str();
}

std::vector<HourlyRecord> from_csv(const std::string& text) {
  std::istringstream is(text);
  return read_csv(is, "test.csv");
}

std::string error_of(const std::string& text) {
  try {
    from_csv(text);
  } catch (const DataError& e) {
    return e.what();
  }
  return {};
}

std::vector<std::string> lines_of(const std::string& text) {
  std::vector<std::string> out;
  std::istringstream is(text);
  std::string l;
  while (std::getline(is, l)) out.push_back(l);
  return out;
}

std::string join(const std::vector<std::string>& lines) {
  std::string s;
  for (const auto& l : lines) s += l + "\n";
  return s;
}

}  // namespace

TEST_CASE("timestamps") {
  const HourStamp h = parse_timestamp("2012-01-01T00:00:00");
  CHECK(h == 15340 * 24);
  CHECK(format_timestamp(h + 37) == "2012-01-02T13:00:00");
  CHECK(parse_timestamp("2016-02-29 23:00") == parse_timestamp("2016-02-29T23:00:00"));
  CHECK_THROWS_AS(parse_timestamp("2013-02-29T00:00"), DataError);
  CHECK_THROWS_AS(parse_timestamp("2013-02-01T00:30"), DataError);
  CHECK_THROWS_AS(parse_timestamp("yesterday"), DataError);
}

TEST_CASE("two-year file has one record per hour") {
  const auto recs = synth_generate(3, 2);
  CHECK(recs.size() == (366 + 365) * 24);
  const auto back = from_csv(to_csv(recs));
  REQUIRE(back.size() == recs.size());
  for (std::size_t i = 0; i < recs.size(); i += 997) {
    CHECK(back[i].hour == recs[i].hour);
    CHECK(back[i].load_mw == doctest::Approx(recs[i].load_mw).epsilon(1e-5));
    CHECK(back[i].is_holiday == recs[i].is_holiday);
  }
  CHECK(to_csv(back) == to_csv(recs));
}

TEST_CASE("short gaps are interpolated") {
  auto lines = lines_of(to_csv(synth_generate(3, 1)));
  const auto full = from_csv(join(lines));
  lines.erase(lines.begin() + 101, lines.begin() + 103);  // two hours
  const auto filled = from_csv(join(lines));
  REQUIRE(filled.size() == full.size());
  const double before = full[99].load_mw, after = full[102].load_mw;
  CHECK(filled[100].load_mw == doctest::Approx(before + (after - before) / 3.0));
  CHECK(filled[101].load_mw == doctest::Approx(before + 2.0 * (after - before) / 3.0));
  CHECK(filled[101].hour == full[101].hour);

  auto gap4 = lines_of(to_csv(synth_generate(3, 1)));
  gap4.erase(gap4.begin() + 101, gap4.begin() + 105);
  CHECK(error_of(join(gap4)).find("gap of 4 hours") != std::string::npos);
}

TEST_CASE("malformed files are rejected with a location") {
  auto lines = lines_of(to_csv(synth_generate(3, 1)));
  lines.resize(50);
  auto dup = lines;
  dup[10] = dup[9];
  const auto msg = error_of(join(dup));
  CHECK(msg.find("duplicated timestamp") != std::string::npos);
  CHECK(msg.find(dup[9].substr(0, 19)) != std::string::npos);
  CHECK(msg.find(":11") != std::string::npos);

  auto bad = lines;
  bad[20] = "2012-01-01T19:00:00,abc,1,1,0";
  CHECK(error_of(join(bad)).find("test.csv:21") != std::string::npos);

  auto back = lines;
  std::swap(back[5], back[6]);
  CHECK(error_of(join(back)).find("earlier") != std::string::npos);

  auto header = lines;
  header[0] = "time,load";
  CHECK(error_of(join(header)).find("header") != std::string::npos);

  auto fields = lines;
  fields[3] += ",9";
  CHECK(error_of(join(fields)).find("expected 5 fields") != std::string::npos);

  CHECK_THROWS_AS(load_csv("/nonexistent/file.csv"), DataError);
}

TEST_CASE("feature layout") {
  const auto recs = synth_generate(5, 1);
  const std::size_t target = find_hour(recs, parse_timestamp("2012-07-10T00:00"));
  const auto ex = build_features(recs, target);
  REQUIRE(ex.x.size() == 133);
  CHECK(feature::kDim == 24 + 24 + 2 + 72 + 7 + 4);
  for (int h = 0; h < 24; ++h) {
    CHECK(ex.x[feature::kPrevDayLoad + h] == recs[target - 24 + h].load_mw);
    CHECK(ex.x[feature::kPrevWeekLoad + h] == recs[target - 168 + h].load_mw);
    const double tf = recs[target + h].temp_forecast_c;
    CHECK(ex.x[feature::kForecastTemp + h] == tf);
    CHECK(ex.x[feature::kForecastTemp2 + h] == tf * tf);
    CHECK(ex.x[feature::kForecastTemp3 + h] == tf * tf * tf);
    CHECK(ex.y[h] == recs[target + h].load_mw);
  }
  double mean = 0.0;
  for (int h = 0; h < 24; ++h) mean += recs[target - 24 + h].temp_actual_c;
  mean /= 24.0;
  CHECK(ex.x[feature::kPastTemp] == doctest::Approx(mean).epsilon(1e-14));
  CHECK(ex.x[feature::kPastTemp + 1] == doctest::Approx(mean * mean).epsilon(1e-14));
  // 2012-07-10 is a Tuesday in summer under daylight saving.
  CHECK(ex.x.segment(feature::kSeason, 4) == Eigen::Vector4d(0, 0, 1, 0));
  CHECK(ex.x[feature::kWeekend] == 0.0);
  CHECK(ex.x[feature::kDaylightSaving] == 1.0);
  CHECK(ex.x[feature::kHoliday] == 0.0);
  CHECK(ex.target == recs[target].hour);
}

TEST_CASE("calendar features") {
  const auto recs = synth_generate(5, 2);
  const auto jan1 = build_features(recs, find_hour(recs, parse_timestamp("2013-01-01T00:00")));
  CHECK(jan1.x[feature::kDayOfYear] == 0.0);
  CHECK(jan1.x[feature::kDayOfYear + 1] == 1.0);
  CHECK(jan1.x[feature::kHourOfYear] == 0.0);
  CHECK(jan1.x[feature::kHourOfYear + 1] == 1.0);
  CHECK(jan1.x[feature::kHoliday] == 1.0);
  CHECK(jan1.x[feature::kSeason] == 1.0);
  CHECK(jan1.x[feature::kDaylightSaving] == 0.0);

  const auto sat1 = build_features(recs, find_hour(recs, parse_timestamp("2012-03-03T00:00")));
  const auto sat2 = build_features(recs, find_hour(recs, parse_timestamp("2012-03-10T00:00")));
  CHECK(sat1.x[feature::kWeekend] == 1.0);
  CHECK(sat2.x[feature::kWeekend] == 1.0);
  CHECK(sat1.x.segment(feature::kSeason, 4) == sat2.x.segment(feature::kSeason, 4));

  // Daylight saving starts on the second Sunday of March.
  CHECK_FALSE(is_daylight_saving(parse_timestamp("2012-03-10T12:00")));
  CHECK(is_daylight_saving(parse_timestamp("2012-03-11T12:00")));
  CHECK(is_daylight_saving(parse_timestamp("2012-11-03T12:00")));
  CHECK_FALSE(is_daylight_saving(parse_timestamp("2012-11-04T12:00")));
}

TEST_CASE("feature building needs a week of history and a whole day") {
  const auto recs = synth_generate(5, 1);
  CHECK_THROWS_AS(build_features(recs, 6 * 24), DataError);
  CHECK_NOTHROW(build_features(recs, 7 * 24));
  CHECK_THROWS_AS(build_features(recs, 7 * 24 + 5), DataError);
  CHECK_THROWS_AS(build_features(recs, recs.size() - 12), DataError);
  const auto ds = build_dataset(recs);
  CHECK(ds.size() == 366 - 7);
  CHECK(ds.front().target == recs[7 * 24].hour);
}

TEST_CASE("normalisation") {
  Matrix x(1, 3);
  x << 1.0, 2.0, 3.0;
  const auto stats = compute_channel_stats(x);
  const Matrix z = normalize(x, stats);
  CHECK(z(0, 0) == doctest::Approx(-1.224744871391589).epsilon(1e-12));
  CHECK(z(0, 1) == 0.0);
  CHECK(z(0, 2) == doctest::Approx(1.224744871391589).epsilon(1e-12));
  CHECK(normalize(stats.mean, stats).cwiseAbs().maxCoeff() == 0.0);

  std::mt19937_64 rng(2);
  std::normal_distribution<double> nd(50.0, 20.0);
  const Matrix r = Matrix::NullaryExpr(6, 40, [&] { return nd(rng); });
  const auto rs = compute_channel_stats(r);
  CHECK((denormalize(normalize(r, rs), rs) - r).cwiseAbs().maxCoeff() < 1e-12);

  CHECK_THROWS_AS(compute_channel_stats(Matrix::Ones(2, 5)), DataError);
  ChannelStats zero{Vector::Zero(1), Vector::Zero(1)};
  CHECK_THROWS_AS(normalize(x, zero), DataError);
}

TEST_CASE("dataset normalisation uses the training split only") {
  const auto recs = synth_generate(9, 1);
  const auto ds = build_dataset(recs);
  const auto parts = split(ds.size(), 4);
  std::vector<TrainingExample> train;
  for (auto i : parts.train) train.push_back(ds[i]);
  const auto stats = compute_norm_stats(train);

  std::vector<TrainingExample> everything(ds.begin(), ds.end());
  const auto leaky = compute_norm_stats(everything);
  CHECK(stats.load_mean != leaky.load_mean);

  const auto again = compute_norm_stats(train);
  CHECK(again.load_mean == stats.load_mean);
  CHECK(again.features.mean == stats.features.mean);

  const auto n = normalize_example(ds[parts.test[0]], stats);
  CHECK((denormalize_load(n.y, stats) - ds[parts.test[0]].y).cwiseAbs().maxCoeff() < 1e-9);
  CHECK(n.x.segment(feature::kCalendarBegin, feature::kDim - feature::kCalendarBegin) ==
        ds[parts.test[0]].x.segment(feature::kCalendarBegin, feature::kDim - feature::kCalendarBegin));
  CHECK(n.x[0] == doctest::Approx((ds[parts.test[0]].x[0] - stats.load_mean) / stats.load_std));
  CHECK(denormalize_variance(Vector::Ones(2), stats)[0] == doctest::Approx(stats.load_std * stats.load_std));

  const auto round = norm_stats_from_json(nlohmann::json::parse(norm_stats_to_json(stats).dump()));
  CHECK(round.load_std == stats.load_std);
  CHECK(round.features.std == stats.features.std);
}

TEST_CASE("split") {
  const auto s = split(100, 1);
  CHECK(s.train.size() == 64);
  CHECK(s.validation.size() == 16);
  CHECK(s.test.size() == 20);
  CHECK(s.test.front() == 80);
  CHECK(s.test.back() == 99);
  std::set<std::size_t> all(s.train.begin(), s.train.end());
  all.insert(s.validation.begin(), s.validation.end());
  all.insert(s.test.begin(), s.test.end());
  CHECK(all.size() == 100);

  const auto again = split(100, 1);
  CHECK(again.train == s.train);
  CHECK(again.validation == s.validation);
  const auto other = split(100, 2);
  CHECK(other.train != s.train);
  CHECK(other.test == s.test);

  CHECK_THROWS_AS(split(9, 1), DataError);
}

TEST_CASE("synthetic generator") {
  const auto a = synth_generate(11, 1);
  const auto b = synth_generate(11, 1);
  CHECK(to_csv(a) == to_csv(b));
  CHECK(to_csv(a) != to_csv(synth_generate(12, 1)));

  SynthProfile flat;
  flat.noise_scale = 0.0;
  flat.yearly_amplitude = 0.0;
  flat.cooling_mw_per_c = 0.0;
  flat.heating_mw_per_c = 0.0;
  flat.holiday_dip = 0.0;
  const auto periodic = synth_generate(11, 1, flat);
  for (std::size_t i = 168; i < periodic.size(); ++i) REQUIRE(periodic[i].load_mw == periodic[i - 168].load_mw);

  const auto five = synth_generate(7, 5);
  CHECK(five.size() == 1827 * 24);
  double sum = 0.0;
  for (const auto& r : five) {
    REQUIRE(r.load_mw > 0.0);
    sum += r.load_mw;
  }
  const double mean = sum / static_cast<double>(five.size());
  double m2 = 0.0, m3 = 0.0, m4 = 0.0;
  for (const auto& r : five) {
    const double d = r.load_mw - mean;
    m2 += d * d;
    m3 += d * d * d;
    m4 += d * d * d * d;
  }
  const auto n = static_cast<double>(five.size());
  m2 /= n;
  m3 /= n;
  m4 /= n;
  const double skew = m3 / std::pow(m2, 1.5);
  const double kurt = m4 / (m2 * m2);
  MESSAGE("mean " << mean << " skewness " << skew << " kurtosis " << kurt);
  CHECK(std::abs(skew) < 0.5);
  CHECK(std::abs(kurt - 3.0) < 0.5);

  CHECK_THROWS_AS(synth_generate(1, 0), DataError);
}
