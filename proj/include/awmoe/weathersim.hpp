#pragma once

#include <array>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "awmoe/geometry.hpp"
#include "awmoe/pointcloud.hpp"
#include "awmoe/rng.hpp"
#include "awmoe/tensor.hpp"

namespace awmoe::sim {

enum class Weather : int {
  kNormal = 0,
  kOvercast,
  kFog,
  kRain,
  kSleet,
  kLightSnow,
  kHeavySnow,
};

inline constexpr int kNumWeather = 7;

/// Display name ("Light Snow") used in reports.
const char* weather_name(Weather w);
/// Single-token name ("LightSnow") used in manifests.
const char* weather_token(Weather w);
Weather weather_from_token(const std::string& token);

struct Calib {
  geom::CameraIntrinsics intrinsics;
  geom::Mat4 t_ext = geom::Mat4::identity();  // camera frame -> ego frame
};

/// One synchronized sample. t_lidar_aug records the accumulated augmentation
/// similarity for the Eq.-6 camera chain; identity when unaugmented.
struct Frame {
  uint64_t id = 0;
  Weather weather = Weather::kNormal;
  pc::LidarCloud lidar;
  pc::RadarCloud radar;
  nn::Tensor image;  // 3 x H x W in [0, 1]
  Calib calib;
  std::vector<geom::Box3D> gt_boxes;
  geom::Mat4 t_lidar_aug = geom::Mat4::identity();
};

struct SceneConfig {
  pc::Extent extent{0.0, 36.0, -18.0, 18.0};
  int min_objects = 1;
  int max_objects = 8;
  int image_height = 64;
  int image_width = 96;
  int ground_points = 1100;
  double object_margin = 2.5;  // keeps footprints inside the extent

  static SceneConfig defaults() { return {}; }
};

Calib default_calib(const SceneConfig& cfg);

struct SceneDebug {
  std::vector<int> lidar_source;  // gt box index per lidar point, -1 = ground
};

/// Clear-weather scene: non-overlapping boxes, surface-sampled LiDAR with
/// range-falling density, sparse radar subsample, rendered image.
Frame generate_scene(nn::Rng& rng, const SceneConfig& cfg, SceneDebug* debug = nullptr);

/// Per-class degradation parameter ranges. All values are invented plumbing,
/// calibrated only to keep the weather classes separable and radar strictly
/// more robust than LiDAR; they are not physical constants.
struct WeatherParams {
  // Fog: survival(r) = exp(-beta r) plus near-range backscatter clutter.
  double fog_beta_min = 0.040, fog_beta_max = 0.070;
  double fog_radar_beta_scale = 0.12;
  int fog_clutter_min = 40, fog_clutter_max = 90;
  // Rain: uniform dropout + coordinate jitter.
  double rain_drop_min = 0.25, rain_drop_max = 0.40;
  double rain_jitter_min = 0.04, rain_jitter_max = 0.08;
  double rain_radar_drop_scale = 0.22, rain_radar_jitter_scale = 0.40;
  // Sleet: milder rain plus a moderate snow shell.
  double sleet_drop_min = 0.15, sleet_drop_max = 0.25;
  double sleet_jitter_min = 0.03, sleet_jitter_max = 0.05;
  int sleet_clutter_min = 90, sleet_clutter_max = 180;
  // Snow shells.
  double snow_shell_rmin = 1.0, snow_shell_rmax = 12.0;
  double light_drop_min = 0.04, light_drop_max = 0.08;
  int light_clutter_min = 120, light_clutter_max = 220;
  double heavy_drop_min = 0.28, heavy_drop_max = 0.40;
  int heavy_clutter_min = 350, heavy_clutter_max = 600;
  double snow_radar_drop_scale = 0.20;
  double snow_radar_clutter_scale = 0.10;

  static WeatherParams defaults() { return {}; }
};

/// One concrete draw from the per-class ranges. Tests may construct this
/// directly (e.g. a fixed fog beta) and call apply_degradation.
struct SampledDegradation {
  double lidar_beta = 0.0, radar_beta = 0.0;      // fog attenuation
  double lidar_dropout = 0.0, radar_dropout = 0.0;
  double lidar_jitter = 0.0, radar_jitter = 0.0;  // meters, gaussian
  int lidar_clutter = 0, radar_clutter = 0;
  double clutter_rmin = 0.5, clutter_rmax = 6.0, clutter_zmax = 2.5;
};

SampledDegradation sample_degradation(Weather w, nn::Rng& rng,
                                      const WeatherParams& params = WeatherParams::defaults());

struct DegradeStats {
  int lidar_in = 0, lidar_kept = 0;
  int radar_in = 0, radar_kept = 0;
  double lidar_survival() const { return lidar_in ? double(lidar_kept) / lidar_in : 1.0; }
  double radar_survival() const { return radar_in ? double(radar_kept) / radar_in : 1.0; }
};

/// Point-cloud part of apply_weather; image untouched. GT boxes never move.
Frame apply_degradation(const Frame& frame, Weather w, const SampledDegradation& d, nn::Rng& rng,
                        DegradeStats* stats = nullptr);

/// Class-characteristic image stamps over the clear rendering.
void stamp_weather_image(nn::Tensor& image, Weather w, nn::Rng& rng);

/// Full weather channel: degrade both clouds and stamp the image. The input
/// frame must be Normal; Normal input with Normal target is the identity.
Frame apply_weather(const Frame& frame, Weather w, nn::Rng& rng,
                    const WeatherParams& params = WeatherParams::defaults(),
                    DegradeStats* stats = nullptr);

// ---------------------------------------------------------------------------
// Dataset files

struct DatasetConfig {
  std::array<int, kNumWeather> train_count{};
  std::array<int, kNumWeather> test_count{};
  std::string out_dir;
  SceneConfig scene = SceneConfig::defaults();
  WeatherParams weather = WeatherParams::defaults();
  std::string mode = "balanced";  // echoed into the manifest

  static DatasetConfig balanced(int train_per_class, int test_per_class, std::string out_dir);
  /// Training counts scaled by per-class ratios (Fig. 2(b)-style skew);
  /// the test split stays balanced.
  static DatasetConfig skewed(int train_base, const std::array<double, kNumWeather>& ratios,
                              int test_per_class, std::string out_dir);
  void validate() const;
};

struct ManifestEntry {
  uint64_t id = 0;
  Weather weather = Weather::kNormal;
  bool is_train = true;
  std::string file;  // relative to the manifest directory
};

struct DatasetManifest {
  uint64_t seed = 0;
  std::string mode;
  std::array<int, kNumWeather> train_count{};
  std::array<int, kNumWeather> test_count{};
  std::vector<ManifestEntry> frames;
};

/// Generates all frames (per-frame stream seed ^ frame id), writes the frame
/// files plus manifest.txt under cfg.out_dir, and returns the manifest.
DatasetManifest build_dataset(const DatasetConfig& cfg, uint64_t seed);

void save_manifest(const std::string& path, const DatasetManifest& m);
DatasetManifest load_manifest(const std::string& path);

void save_frame(const std::string& path, const Frame& frame);
Frame load_frame(const std::string& path);

/// Loads every frame listed in the manifest under dir.
std::vector<Frame> load_frames(const DatasetManifest& m, const std::string& dir, bool train_split);

}  // namespace awmoe::sim
