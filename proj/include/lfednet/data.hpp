#ifndef LFEDNET_DATA_HPP
#define LFEDNET_DATA_HPP

#include "lfednet/types.hpp"

#include <json.hpp>

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <string>
#include <vector>

namespace lfednet::data {

/// Hour-resolution local timestamps are counted in hours since
/// 1970-01-01T00:00 of the (fixed-offset) local clock.
using HourStamp = std::int64_t;

std::string format_timestamp(HourStamp hour);
/// Accepts YYYY-MM-DDTHH:MM[:SS] (or a space instead of T) on the hour.
HourStamp parse_timestamp(const std::string& text);

struct HourlyRecord {
  HourStamp hour = 0;
  double load_mw = 0.0;
  double temp_actual_c = 0.0;
  double temp_forecast_c = 0.0;
  bool is_holiday = false;
};

inline constexpr const char* kCsvHeader = "timestamp,load_mw,temp_actual_c,temp_forecast_c,is_holiday";

/// Gaps of up to this many missing hours are filled by linear interpolation.
inline constexpr int kMaxGapHours = 3;

std::vector<HourlyRecord> load_csv(const std::filesystem::path& path);
std::vector<HourlyRecord> read_csv(std::istream& in, const std::string& source = "<stream>");
void write_csv(const std::filesystem::path& path, const std::vector<HourlyRecord>& records);
void write_csv(std::ostream& out, const std::vector<HourlyRecord>& records);

// Feature layout for the day following day D (the target day).
namespace feature {
inline constexpr Eigen::Index kPrevDayLoad = 0;       ///< 24 loads of day D
inline constexpr Eigen::Index kPrevWeekLoad = 24;     ///< 24 loads of the target weekday one week earlier
inline constexpr Eigen::Index kPastTemp = 48;         ///< mean actual temperature of day D, and its square
inline constexpr Eigen::Index kForecastTemp = 50;     ///< 24 forecast temperatures of the target day
inline constexpr Eigen::Index kForecastTemp2 = 74;    ///< their squares
inline constexpr Eigen::Index kForecastTemp3 = 98;    ///< their cubes
inline constexpr Eigen::Index kSeason = 122;          ///< one-hot winter, spring, summer, autumn
inline constexpr Eigen::Index kHoliday = 126;
inline constexpr Eigen::Index kWeekend = 127;
inline constexpr Eigen::Index kDaylightSaving = 128;
inline constexpr Eigen::Index kHourOfYear = 129;      ///< sin, cos of 2 pi h / (365 * 24) at the first target hour
inline constexpr Eigen::Index kDayOfYear = 131;       ///< sin, cos of 2 pi d / 365
inline constexpr Eigen::Index kDim = 133;
/// Channels [0, kLoadEnd) are loads and share the load normalisation.
inline constexpr Eigen::Index kLoadEnd = 48;
/// Channels [kCalendarBegin, kDim) are calendar indicators, left unscaled.
inline constexpr Eigen::Index kCalendarBegin = 122;
}  // namespace feature

/// History needed before the target day.
inline constexpr int kHistoryDays = 7;

struct TrainingExample {
  Vector x;          ///< feature::kDim entries
  Vector y;          ///< 24 actual loads of the target day
  HourStamp target;  ///< first hour of the target day
};

/// US daylight-saving rule: from the second Sunday of March to the first
/// Sunday of November.
bool is_daylight_saving(HourStamp hour);

/// Features for the day starting at records[target_start]. Throws DataError if
/// the target does not start at midnight, the history is shorter than a week,
/// or the day is incomplete.
TrainingExample build_features(const std::vector<HourlyRecord>& records, std::size_t target_start);

/// One example per complete target day with a full week of history, in
/// chronological order.
std::vector<TrainingExample> build_dataset(const std::vector<HourlyRecord>& records);

/// Index of the record at `hour`, or throws DataError.
std::size_t find_hour(const std::vector<HourlyRecord>& records, HourStamp hour);

/// Per-channel mean and population standard deviation.
struct ChannelStats {
  Vector mean;
  Vector std;
};

/// Stats over the columns of `samples` (one sample per column). Throws
/// DataError on a zero-variance channel.
ChannelStats compute_channel_stats(const Matrix& samples);
Matrix normalize(const Matrix& samples, const ChannelStats& stats);
Matrix denormalize(const Matrix& samples, const ChannelStats& stats);

/// Normalisation of the feature vector and the target. All load channels and
/// the target share one mean and standard deviation so that the residual path
/// sees lagged loads on the target scale.
struct NormStats {
  double load_mean = 0.0;
  double load_std = 1.0;
  ChannelStats features;
};

/// Computed from the training split only.
NormStats compute_norm_stats(const std::vector<TrainingExample>& train);
TrainingExample normalize_example(const TrainingExample& ex, const NormStats& stats);
Vector denormalize_load(const Vector& y, const NormStats& stats);
/// Variance in normalised units to MW^2.
Vector denormalize_variance(const Vector& sigma2, const NormStats& stats);

nlohmann::json norm_stats_to_json(const NormStats& stats);
NormStats norm_stats_from_json(const nlohmann::json& j);

struct Split {
  std::vector<std::size_t> train;
  std::vector<std::size_t> validation;
  std::vector<std::size_t> test;
};

/// The last fifth (chronologically) is the test set; the rest is shuffled with
/// `seed` and its last fifth becomes the validation set.
Split split(std::size_t n_examples, std::uint64_t seed);

struct SynthProfile {
  double base_mw = 290.0;
  double daily_amplitude = 0.15;
  double weekend_dip = 0.1;
  double yearly_amplitude = 0.03;
  double cooling_mw_per_c = 3.5;    ///< above 20 C
  double cooling_growth = 0.06;     ///< relative increase of the cooling slope per degree above 20 C
  double heating_mw_per_c = 3.0;    ///< below 12 C
  double holiday_dip = 0.1;
  double noise_scale = 1.0;         ///< scales every random component
  double load_noise_mw = 8.0;       ///< stationary sd of the AR(1) load noise
  double weather_anomaly_c = 4.0;   ///< stationary sd of the temperature anomaly
  double forecast_error_c = 1.5;    ///< stationary sd of the temperature forecast error
  int start_year = 2012;
};

/// Hourly synthetic series covering `n_years` calendar years from
/// January 1 of profile.start_year; deterministic per seed.
std::vector<HourlyRecord> synth_generate(std::uint64_t seed, int n_years, const SynthProfile& profile = {});

}  // namespace lfednet::data

#endif  // LFEDNET_DATA_HPP
