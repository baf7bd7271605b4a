#include "awmoe/weathersim.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <stdexcept>

#include "awmoe/bytes.hpp"

namespace awmoe::sim {

namespace {
constexpr double kPi = 3.14159265358979323846;
constexpr char kFrameMagic[4] = {'A', 'W', 'F', 'R'};
constexpr uint32_t kFrameVersion = 1;
}  // namespace

const char* weather_name(Weather w) {
  switch (w) {
    case Weather::kNormal: return "Normal";
    case Weather::kOvercast: return "Overcast";
    case Weather::kFog: return "Fog";
    case Weather::kRain: return "Rain";
    case Weather::kSleet: return "Sleet";
    case Weather::kLightSnow: return "Light Snow";
    case Weather::kHeavySnow: return "Heavy Snow";
  }
  return "?";
}

const char* weather_token(Weather w) {
  switch (w) {
    case Weather::kNormal: return "Normal";
    case Weather::kOvercast: return "Overcast";
    case Weather::kFog: return "Fog";
    case Weather::kRain: return "Rain";
    case Weather::kSleet: return "Sleet";
    case Weather::kLightSnow: return "LightSnow";
    case Weather::kHeavySnow: return "HeavySnow";
  }
  return "?";
}

Weather weather_from_token(const std::string& token) {
  for (int i = 0; i < kNumWeather; ++i)
    if (token == weather_token(static_cast<Weather>(i))) return static_cast<Weather>(i);
  throw std::invalid_argument("unknown weather token: " + token);
}

Calib default_calib(const SceneConfig& cfg) {
  Calib calib;
  calib.intrinsics.fx = 55.0;
  calib.intrinsics.fy = 55.0;
  calib.intrinsics.cx = cfg.image_width / 2.0;
  calib.intrinsics.cy = cfg.image_height / 2.0;
  calib.intrinsics.width = cfg.image_width;
  calib.intrinsics.height = cfg.image_height;
  // camera at (0, 0, 1.6) looking along +x; camera axes: x right, y down, z forward
  geom::Mat4 t = geom::Mat4::identity();
  t.at(0, 0) = 0;
  t.at(0, 1) = 0;
  t.at(0, 2) = 1;
  t.at(1, 0) = -1;
  t.at(1, 1) = 0;
  t.at(1, 2) = 0;
  t.at(2, 0) = 0;
  t.at(2, 1) = -1;
  t.at(2, 2) = 0;
  t.at(2, 3) = 1.6;
  calib.t_ext = t;
  return calib;
}

// ---------------------------------------------------------------------------
// Scene generation

namespace {

struct PixelRect {
  int u0, u1, v0, v1;
};

void fill_rect(nn::Tensor& img, const PixelRect& r, float cr, float cg, float cb) {
  const int h = img.dim(1), w = img.dim(2);
  for (int v = std::max(0, r.v0); v <= std::min(h - 1, r.v1); ++v)
    for (int u = std::max(0, r.u0); u <= std::min(w - 1, r.u1); ++u) {
      img.at3(0, v, u) = cr;
      img.at3(1, v, u) = cg;
      img.at3(2, v, u) = cb;
    }
}

void clamp_image(nn::Tensor& img) {
  for (auto& v : img.data) v = std::clamp(v, 0.0f, 1.0f);
}

nn::Tensor render_clear_image(const std::vector<geom::Box3D>& boxes, const Calib& calib,
                              const SceneConfig& cfg, nn::Rng& rng) {
  const int h = cfg.image_height, w = cfg.image_width;
  nn::Tensor img({3, h, w});
  const double horizon = calib.intrinsics.cy;
  const float jitter = static_cast<float>(rng.uniform(-0.04, 0.04));

  for (int v = 0; v < h; ++v) {
    float r, g, b;
    if (v < horizon) {
      const float t = static_cast<float>((horizon - v) / horizon);
      r = 0.55f + 0.05f * t;
      g = 0.62f + 0.05f * t;
      b = 0.78f + 0.04f * t;
    } else {
      const float t = static_cast<float>((v - horizon) / (h - horizon));
      r = 0.35f + 0.05f * t;
      g = 0.34f + 0.05f * t;
      b = 0.33f + 0.05f * t;
    }
    for (int u = 0; u < w; ++u) {
      img.at3(0, v, u) = r + jitter;
      img.at3(1, v, u) = g + jitter;
      img.at3(2, v, u) = b + jitter;
    }
  }

  // far-to-near painter's pass over the boxes
  std::vector<std::pair<double, size_t>> order;
  for (size_t i = 0; i < boxes.size(); ++i) {
    const auto proj = geom::project_to_pixel({boxes[i].x, boxes[i].y, boxes[i].z},
                                             calib.intrinsics, calib.t_ext);
    if (proj.status == geom::PixelProjection::Status::kBehindCamera) continue;
    order.emplace_back(-proj.depth, i);
  }
  std::sort(order.begin(), order.end());
  for (const auto& [neg_depth, i] : order) {
    const auto& box = boxes[i];
    const float tint = static_cast<float>(rng.uniform(0.85, 1.15));
    const auto proj = geom::project_to_pixel({box.x, box.y, box.z}, calib.intrinsics, calib.t_ext);
    const double d = proj.depth;
    if (proj.u < -20 || proj.u > w + 20) continue;
    const double half_w = calib.intrinsics.fx * (box.dy / 2) / d;
    const double half_h = calib.intrinsics.fy * (box.dz / 2) / d;
    const float dim = static_cast<float>(std::max(0.45, 1.0 - d / 70.0));
    PixelRect rect{static_cast<int>(proj.u - half_w), static_cast<int>(proj.u + half_w),
                   static_cast<int>(proj.v - half_h), static_cast<int>(proj.v + half_h)};
    fill_rect(img, rect, 0.72f * tint * dim + jitter, 0.66f * tint * dim + jitter,
              0.60f * tint * dim + jitter);
  }

  // sensor grain
  for (int v = 0; v < h; ++v)
    for (int u = 0; u < w; ++u) {
      const float n = static_cast<float>(rng.uniform(-0.012, 0.012));
      img.at3(0, v, u) += n;
      img.at3(1, v, u) += n;
      img.at3(2, v, u) += n;
    }
  clamp_image(img);
  return img;
}

pc::LidarPoint sample_box_surface(const geom::Box3D& box, nn::Rng& rng, float intensity) {
  // faces: +x, -x, +y, -y, top; weighted by area
  const double a_side_x = box.dy * box.dz;
  const double a_side_y = box.dx * box.dz;
  const double a_top = box.dx * box.dy;
  const double total = 2 * a_side_x + 2 * a_side_y + a_top;
  const double pick = rng.uniform(0.0, total);
  const double eps = 1e-3;
  double lx, ly, lz;
  const double hx = box.dx / 2 - eps, hy = box.dy / 2 - eps, hz = box.dz / 2 - eps;
  if (pick < a_side_x) {
    lx = hx;
    ly = rng.uniform(-hy, hy);
    lz = rng.uniform(-hz, hz);
  } else if (pick < 2 * a_side_x) {
    lx = -hx;
    ly = rng.uniform(-hy, hy);
    lz = rng.uniform(-hz, hz);
  } else if (pick < 2 * a_side_x + a_side_y) {
    lx = rng.uniform(-hx, hx);
    ly = hy;
    lz = rng.uniform(-hz, hz);
  } else if (pick < 2 * a_side_x + 2 * a_side_y) {
    lx = rng.uniform(-hx, hx);
    ly = -hy;
    lz = rng.uniform(-hz, hz);
  } else {
    lx = rng.uniform(-hx, hx);
    ly = rng.uniform(-hy, hy);
    lz = hz;
  }
  const double c = std::cos(box.yaw), s = std::sin(box.yaw);
  pc::LidarPoint p;
  p.x = static_cast<float>(box.x + c * lx - s * ly);
  p.y = static_cast<float>(box.y + s * lx + c * ly);
  p.z = static_cast<float>(box.z + lz);
  p.intensity = intensity;
  return p;
}

}  // namespace

Frame generate_scene(nn::Rng& rng, const SceneConfig& cfg, SceneDebug* debug) {
  Frame frame;
  frame.weather = Weather::kNormal;
  frame.calib = default_calib(cfg);
  if (debug) debug->lidar_source.clear();

  const int want = cfg.max_objects <= 0
                       ? 0
                       : rng.range_int(std::max(0, cfg.min_objects), cfg.max_objects);
  for (int i = 0; i < want; ++i) {
    for (int attempt = 0; attempt < 40; ++attempt) {
      geom::Box3D box;
      box.dx = rng.uniform(3.6, 5.0);
      box.dy = rng.uniform(1.6, 2.0);
      box.dz = rng.uniform(1.4, 1.8);
      box.x = rng.uniform(cfg.extent.x_min + cfg.object_margin, cfg.extent.x_max - cfg.object_margin);
      box.y = rng.uniform(cfg.extent.y_min + cfg.object_margin, cfg.extent.y_max - cfg.object_margin);
      box.z = box.dz / 2;
      box.yaw = geom::wrap_angle(rng.uniform(-kPi, kPi));
      bool clear = true;
      for (const auto& other : frame.gt_boxes)
        if (geom::bev_iou(box, other) > 0.0) {
          clear = false;
          break;
        }
      if (clear) {
        frame.gt_boxes.push_back(box);
        break;
      }
    }
  }

  // object returns, density falling with range
  for (size_t bi = 0; bi < frame.gt_boxes.size(); ++bi) {
    const auto& box = frame.gt_boxes[bi];
    const double r = std::hypot(box.x, box.y);
    const int n_pts = std::clamp(static_cast<int>(std::lround(900.0 / std::max(r, 1.0))), 15, 200);
    const float base_intensity = static_cast<float>(rng.uniform(0.45, 0.85));
    for (int k = 0; k < n_pts; ++k) {
      const float inten = std::clamp(
          base_intensity + static_cast<float>(rng.uniform(-0.05, 0.05)), 0.0f, 1.0f);
      frame.lidar.push_back(sample_box_surface(box, rng, inten));
      if (debug) debug->lidar_source.push_back(static_cast<int>(bi));
    }

    // sparse radar subsample with per-object radial velocity
    const int n_radar = std::max(3, n_pts / 8);
    const double v_obj = rng.uniform(-15.0, 15.0);
    for (int k = 0; k < n_radar; ++k) {
      const auto lp = sample_box_surface(box, rng, 0.0f);
      pc::RadarPoint rp;
      rp.x = lp.x;
      rp.y = lp.y;
      rp.z = lp.z;
      rp.doppler = static_cast<float>(v_obj + rng.normal(0.0, 0.4));
      rp.power = static_cast<float>(
          std::clamp(0.25 + 0.55 * std::exp(-r / 25.0) + rng.normal(0.0, 0.05), 0.0, 1.0));
      frame.radar.push_back(rp);
    }
  }

  // ground returns
  for (int k = 0; k < cfg.ground_points; ++k) {
    pc::LidarPoint p;
    p.x = static_cast<float>(rng.uniform(cfg.extent.x_min, cfg.extent.x_max));
    p.y = static_cast<float>(rng.uniform(cfg.extent.y_min, cfg.extent.y_max));
    p.z = static_cast<float>(rng.normal(0.0, 0.02));
    p.intensity = static_cast<float>(rng.uniform(0.05, 0.3));
    frame.lidar.push_back(p);
    if (debug) debug->lidar_source.push_back(-1);
  }
  for (int k = 0; k < 25; ++k) {
    pc::RadarPoint p;
    p.x = static_cast<float>(rng.uniform(cfg.extent.x_min, cfg.extent.x_max));
    p.y = static_cast<float>(rng.uniform(cfg.extent.y_min, cfg.extent.y_max));
    p.z = static_cast<float>(rng.uniform(0.0, 0.6));
    p.doppler = static_cast<float>(rng.normal(0.0, 0.5));
    p.power = static_cast<float>(rng.uniform(0.02, 0.12));
    frame.radar.push_back(p);
  }

  frame.image = render_clear_image(frame.gt_boxes, frame.calib, cfg, rng);
  return frame;
}

// ---------------------------------------------------------------------------
// Degradation

SampledDegradation sample_degradation(Weather w, nn::Rng& rng, const WeatherParams& p) {
  SampledDegradation d;
  switch (w) {
    case Weather::kNormal:
    case Weather::kOvercast:
      break;  // point clouds untouched
    case Weather::kFog:
      d.lidar_beta = rng.uniform(p.fog_beta_min, p.fog_beta_max);
      d.radar_beta = d.lidar_beta * p.fog_radar_beta_scale;
      d.lidar_clutter = rng.range_int(p.fog_clutter_min, p.fog_clutter_max);
      d.radar_clutter = static_cast<int>(d.lidar_clutter * 0.08);
      d.clutter_rmin = 0.5;
      d.clutter_rmax = 6.0;
      d.clutter_zmax = 2.5;
      break;
    case Weather::kRain:
      d.lidar_dropout = rng.uniform(p.rain_drop_min, p.rain_drop_max);
      d.radar_dropout = d.lidar_dropout * p.rain_radar_drop_scale;
      d.lidar_jitter = rng.uniform(p.rain_jitter_min, p.rain_jitter_max);
      d.radar_jitter = d.lidar_jitter * p.rain_radar_jitter_scale;
      break;
    case Weather::kSleet:
      d.lidar_dropout = rng.uniform(p.sleet_drop_min, p.sleet_drop_max);
      d.radar_dropout = d.lidar_dropout * p.rain_radar_drop_scale;
      d.lidar_jitter = rng.uniform(p.sleet_jitter_min, p.sleet_jitter_max);
      d.radar_jitter = d.lidar_jitter * p.rain_radar_jitter_scale;
      d.lidar_clutter = rng.range_int(p.sleet_clutter_min, p.sleet_clutter_max);
      d.radar_clutter = static_cast<int>(d.lidar_clutter * p.snow_radar_clutter_scale);
      d.clutter_rmin = p.snow_shell_rmin;
      d.clutter_rmax = p.snow_shell_rmax;
      d.clutter_zmax = 3.0;
      break;
    case Weather::kLightSnow:
      d.lidar_dropout = rng.uniform(p.light_drop_min, p.light_drop_max);
      d.radar_dropout = d.lidar_dropout * p.snow_radar_drop_scale;
      d.lidar_clutter = rng.range_int(p.light_clutter_min, p.light_clutter_max);
      d.radar_clutter = static_cast<int>(d.lidar_clutter * p.snow_radar_clutter_scale);
      d.clutter_rmin = p.snow_shell_rmin;
      d.clutter_rmax = p.snow_shell_rmax;
      d.clutter_zmax = 3.0;
      break;
    case Weather::kHeavySnow:
      d.lidar_dropout = rng.uniform(p.heavy_drop_min, p.heavy_drop_max);
      d.radar_dropout = d.lidar_dropout * p.snow_radar_drop_scale;
      d.lidar_clutter = rng.range_int(p.heavy_clutter_min, p.heavy_clutter_max);
      d.radar_clutter = static_cast<int>(d.lidar_clutter * p.snow_radar_clutter_scale);
      d.clutter_rmin = p.snow_shell_rmin;
      d.clutter_rmax = p.snow_shell_rmax;
      d.clutter_zmax = 3.0;
      break;
  }
  return d;
}

Frame apply_degradation(const Frame& frame, Weather w, const SampledDegradation& d, nn::Rng& rng,
                        DegradeStats* stats) {
  Frame out = frame;
  out.weather = w;
  DegradeStats local;
  local.lidar_in = static_cast<int>(frame.lidar.size());
  local.radar_in = static_cast<int>(frame.radar.size());

  out.lidar.clear();
  for (const auto& p : frame.lidar) {
    bool keep = true;
    if (d.lidar_beta > 0.0) {
      const double r = std::sqrt(double(p.x) * p.x + double(p.y) * p.y + double(p.z) * p.z);
      keep = rng.uniform() < std::exp(-d.lidar_beta * r);
    }
    if (keep && d.lidar_dropout > 0.0) keep = rng.uniform() >= d.lidar_dropout;
    if (!keep) continue;
    pc::LidarPoint q = p;
    if (d.lidar_jitter > 0.0) {
      q.x += static_cast<float>(rng.normal(0.0, d.lidar_jitter));
      q.y += static_cast<float>(rng.normal(0.0, d.lidar_jitter));
      q.z += static_cast<float>(rng.normal(0.0, d.lidar_jitter));
    }
    out.lidar.push_back(q);
  }
  local.lidar_kept = static_cast<int>(out.lidar.size());
  for (int i = 0; i < d.lidar_clutter; ++i) {
    const double r = rng.uniform(d.clutter_rmin, d.clutter_rmax);
    const double theta = rng.uniform(-kPi / 2, kPi / 2);
    pc::LidarPoint p;
    p.x = static_cast<float>(r * std::cos(theta));
    p.y = static_cast<float>(r * std::sin(theta));
    p.z = static_cast<float>(rng.uniform(0.0, d.clutter_zmax));
    p.intensity = static_cast<float>(rng.uniform(0.03, 0.2));
    out.lidar.push_back(p);
  }

  out.radar.clear();
  for (const auto& p : frame.radar) {
    bool keep = true;
    if (d.radar_beta > 0.0) {
      const double r = std::sqrt(double(p.x) * p.x + double(p.y) * p.y + double(p.z) * p.z);
      keep = rng.uniform() < std::exp(-d.radar_beta * r);
    }
    if (keep && d.radar_dropout > 0.0) keep = rng.uniform() >= d.radar_dropout;
    if (!keep) continue;
    pc::RadarPoint q = p;
    if (d.radar_jitter > 0.0) {
      q.x += static_cast<float>(rng.normal(0.0, d.radar_jitter));
      q.y += static_cast<float>(rng.normal(0.0, d.radar_jitter));
      q.z += static_cast<float>(rng.normal(0.0, d.radar_jitter));
    }
    out.radar.push_back(q);
  }
  local.radar_kept = static_cast<int>(out.radar.size());
  for (int i = 0; i < d.radar_clutter; ++i) {
    const double r = rng.uniform(d.clutter_rmin, d.clutter_rmax);
    const double theta = rng.uniform(-kPi / 2, kPi / 2);
    pc::RadarPoint p;
    p.x = static_cast<float>(r * std::cos(theta));
    p.y = static_cast<float>(r * std::sin(theta));
    p.z = static_cast<float>(rng.uniform(0.0, d.clutter_zmax));
    p.doppler = static_cast<float>(rng.normal(0.0, 2.0));
    p.power = static_cast<float>(rng.uniform(0.05, 0.3));
    out.radar.push_back(p);
  }

  if (stats) *stats = local;
  return out;
}

// ---------------------------------------------------------------------------
// Image stamps

namespace {

void add_brightness(nn::Tensor& img, float b) {
  for (auto& v : img.data) v += b;
}

void blend_toward(nn::Tensor& img, int v, int u, float alpha, float cr, float cg, float cb) {
  img.at3(0, v, u) = (1 - alpha) * img.at3(0, v, u) + alpha * cr;
  img.at3(1, v, u) = (1 - alpha) * img.at3(1, v, u) + alpha * cg;
  img.at3(2, v, u) = (1 - alpha) * img.at3(2, v, u) + alpha * cb;
}

void stamp_streaks(nn::Tensor& img, nn::Rng& rng, int n) {
  const int h = img.dim(1), w = img.dim(2);
  for (int i = 0; i < n; ++i) {
    const double x0 = rng.uniform(0, w - 1);
    const double slope = rng.uniform(-0.15, 0.15);
    const int v0 = rng.range_int(0, h / 3);
    const int len = rng.range_int(14, 40);
    for (int v = v0; v < std::min(h, v0 + len); ++v) {
      const int u = static_cast<int>(std::lround(x0 + slope * (v - v0)));
      if (u < 0 || u >= w) continue;
      blend_toward(img, v, u, 0.45f, 0.82f, 0.82f, 0.85f);
    }
  }
}

void stamp_speckle(nn::Tensor& img, nn::Rng& rng, int n, float strength, int block) {
  const int h = img.dim(1), w = img.dim(2);
  for (int i = 0; i < n; ++i) {
    const int u = rng.range_int(0, w - 1);
    const int v = rng.range_int(0, h - 1);
    for (int dv = 0; dv < block; ++dv)
      for (int du = 0; du < block; ++du) {
        const int vv = v + dv, uu = u + du;
        if (vv >= h || uu >= w) continue;
        for (int c = 0; c < 3; ++c)
          img.at3(c, vv, uu) += (1.0f - img.at3(c, vv, uu)) * strength;
      }
  }
}

void stamp_blobs(nn::Tensor& img, nn::Rng& rng, int n) {
  const int h = img.dim(1), w = img.dim(2);
  for (int i = 0; i < n; ++i) {
    const double cu = rng.uniform(0, w - 1);
    const double cv = rng.uniform(h * 0.55, h - 1);
    const double rad = rng.uniform(1.2, 3.0);
    const float amp = static_cast<float>(rng.uniform(0.25, 0.45));
    const int r = static_cast<int>(std::ceil(rad * 2));
    for (int v = std::max(0, int(cv) - r); v <= std::min(h - 1, int(cv) + r); ++v)
      for (int u = std::max(0, int(cu) - r); u <= std::min(w - 1, int(cu) + r); ++u) {
        const double d2 = (u - cu) * (u - cu) + (v - cv) * (v - cv);
        const float g = amp * static_cast<float>(std::exp(-d2 / (2 * rad * rad)));
        for (int c = 0; c < 3; ++c) img.at3(c, v, u) += g;
      }
  }
}

void stamp_haze(nn::Tensor& img, nn::Rng& rng, double a0, double a1) {
  const int h = img.dim(1), w = img.dim(2);
  const double fu = rng.uniform(0.5, 1.5), fv = rng.uniform(0.5, 1.5);
  const double pu = rng.uniform(0.0, 1.0), pv = rng.uniform(0.0, 1.0);
  for (int v = 0; v < h; ++v)
    for (int u = 0; u < w; ++u) {
      const double field = std::cos(2 * kPi * (fu * u / w + pu)) * std::cos(2 * kPi * (fv * v / h + pv));
      const float alpha = static_cast<float>(std::clamp(a0 + a1 * field, 0.0, 0.95));
      blend_toward(img, v, u, alpha, 0.82f, 0.82f, 0.84f);
    }
}

}  // namespace

void stamp_weather_image(nn::Tensor& image, Weather w, nn::Rng& rng) {
  switch (w) {
    case Weather::kNormal:
      break;
    case Weather::kOvercast: {
      const float contrast = static_cast<float>(rng.uniform(0.45, 0.60));
      const float shift = static_cast<float>(rng.uniform(-0.18, -0.10));
      for (auto& v : image.data) v = 0.5f + (v - 0.5f) * contrast + shift;
      break;
    }
    case Weather::kFog:
      stamp_haze(image, rng, rng.uniform(0.55, 0.70), rng.uniform(0.10, 0.20));
      break;
    case Weather::kRain: {
      add_brightness(image, static_cast<float>(rng.uniform(-0.06, -0.02)));
      stamp_streaks(image, rng, rng.range_int(28, 45));
      stamp_blobs(image, rng, rng.range_int(4, 9));
      break;
    }
    case Weather::kSleet: {
      stamp_streaks(image, rng, rng.range_int(10, 20));
      stamp_speckle(image, rng, rng.range_int(180, 300), 0.8f, 1);
      break;
    }
    case Weather::kLightSnow: {
      add_brightness(image, static_cast<float>(rng.uniform(0.02, 0.06)));
      stamp_speckle(image, rng, rng.range_int(260, 420), 0.85f, 1);
      break;
    }
    case Weather::kHeavySnow: {
      add_brightness(image, static_cast<float>(rng.uniform(0.05, 0.10)));
      const float whiten = static_cast<float>(rng.uniform(0.18, 0.30));
      for (auto& v : image.data) v = (1 - whiten) * v + whiten * 0.9f;
      stamp_speckle(image, rng, rng.range_int(650, 1000), 0.9f, 2);
      break;
    }
  }
  clamp_image(image);
}

Frame apply_weather(const Frame& frame, Weather w, nn::Rng& rng, const WeatherParams& params,
                    DegradeStats* stats) {
  if (frame.weather != Weather::kNormal)
    throw std::invalid_argument("apply_weather: input frame must be Normal");
  if (w == Weather::kNormal) {
    if (stats) {
      stats->lidar_in = stats->lidar_kept = static_cast<int>(frame.lidar.size());
      stats->radar_in = stats->radar_kept = static_cast<int>(frame.radar.size());
    }
    return frame;
  }
  const SampledDegradation d = sample_degradation(w, rng, params);
  Frame out = apply_degradation(frame, w, d, rng, stats);
  stamp_weather_image(out.image, w, rng);
  return out;
}

// ---------------------------------------------------------------------------
// Frame files

void save_frame(const std::string& path, const Frame& frame) {
  bytes::Writer w;
  w.raw(kFrameMagic, 4);
  w.u32(kFrameVersion);
  w.u64(frame.id);
  w.u32(static_cast<uint32_t>(frame.weather));
  w.u32(static_cast<uint32_t>(frame.lidar.size()));
  for (const auto& p : frame.lidar) {
    w.f32(p.x);
    w.f32(p.y);
    w.f32(p.z);
    w.f32(p.intensity);
  }
  w.u32(static_cast<uint32_t>(frame.radar.size()));
  for (const auto& p : frame.radar) {
    w.f32(p.x);
    w.f32(p.y);
    w.f32(p.z);
    w.f32(p.doppler);
    w.f32(p.power);
  }
  w.u32(static_cast<uint32_t>(frame.image.dim(0)));
  w.u32(static_cast<uint32_t>(frame.image.dim(1)));
  w.u32(static_cast<uint32_t>(frame.image.dim(2)));
  for (float v : frame.image.data) w.f32(v);
  w.f64(frame.calib.intrinsics.fx);
  w.f64(frame.calib.intrinsics.fy);
  w.f64(frame.calib.intrinsics.cx);
  w.f64(frame.calib.intrinsics.cy);
  w.u32(static_cast<uint32_t>(frame.calib.intrinsics.width));
  w.u32(static_cast<uint32_t>(frame.calib.intrinsics.height));
  for (double v : frame.calib.t_ext.m) w.f64(v);
  for (double v : frame.t_lidar_aug.m) w.f64(v);
  w.u32(static_cast<uint32_t>(frame.gt_boxes.size()));
  for (const auto& b : frame.gt_boxes) {
    w.f64(b.x);
    w.f64(b.y);
    w.f64(b.z);
    w.f64(b.dx);
    w.f64(b.dy);
    w.f64(b.dz);
    w.f64(b.yaw);
  }
  bytes::write_file(path, w.bytes());
}

Frame load_frame(const std::string& path) {
  const auto raw = bytes::read_file(path);
  bytes::Reader r(raw);
  char magic[4];
  for (char& c : magic) c = static_cast<char>(r.u8());
  if (std::string(magic, 4) != std::string(kFrameMagic, 4))
    throw std::runtime_error("frame file: bad magic: " + path);
  if (r.u32() != kFrameVersion) throw std::runtime_error("frame file: unsupported version");
  Frame frame;
  frame.id = r.u64();
  frame.weather = static_cast<Weather>(r.u32());
  frame.lidar.resize(r.u32());
  for (auto& p : frame.lidar) {
    p.x = r.f32();
    p.y = r.f32();
    p.z = r.f32();
    p.intensity = r.f32();
  }
  frame.radar.resize(r.u32());
  for (auto& p : frame.radar) {
    p.x = r.f32();
    p.y = r.f32();
    p.z = r.f32();
    p.doppler = r.f32();
    p.power = r.f32();
  }
  const int c = static_cast<int>(r.u32());
  const int h = static_cast<int>(r.u32());
  const int w = static_cast<int>(r.u32());
  frame.image = nn::Tensor({c, h, w});
  for (auto& v : frame.image.data) v = r.f32();
  frame.calib.intrinsics.fx = r.f64();
  frame.calib.intrinsics.fy = r.f64();
  frame.calib.intrinsics.cx = r.f64();
  frame.calib.intrinsics.cy = r.f64();
  frame.calib.intrinsics.width = static_cast<int>(r.u32());
  frame.calib.intrinsics.height = static_cast<int>(r.u32());
  for (double& v : frame.calib.t_ext.m) v = r.f64();
  for (double& v : frame.t_lidar_aug.m) v = r.f64();
  frame.gt_boxes.resize(r.u32());
  for (auto& b : frame.gt_boxes) {
    b.x = r.f64();
    b.y = r.f64();
    b.z = r.f64();
    b.dx = r.f64();
    b.dy = r.f64();
    b.dz = r.f64();
    b.yaw = r.f64();
  }
  return frame;
}

// ---------------------------------------------------------------------------
// Dataset build + manifest

DatasetConfig DatasetConfig::balanced(int train_per_class, int test_per_class,
                                      std::string out_dir) {
  DatasetConfig cfg;
  cfg.train_count.fill(train_per_class);
  cfg.test_count.fill(test_per_class);
  cfg.out_dir = std::move(out_dir);
  cfg.mode = "balanced";
  return cfg;
}

DatasetConfig DatasetConfig::skewed(int train_base, const std::array<double, kNumWeather>& ratios,
                                    int test_per_class, std::string out_dir) {
  DatasetConfig cfg;
  for (int i = 0; i < kNumWeather; ++i) {
    if (!(ratios[i] > 0)) throw std::invalid_argument("DatasetConfig: skew ratios must be > 0");
    cfg.train_count[i] = static_cast<int>(std::lround(train_base * ratios[i]));
  }
  cfg.test_count.fill(test_per_class);
  cfg.out_dir = std::move(out_dir);
  cfg.mode = "skewed";
  return cfg;
}

void DatasetConfig::validate() const {
  for (int i = 0; i < kNumWeather; ++i) {
    if (train_count[i] < 1 || test_count[i] < 1)
      throw std::invalid_argument(
          "DatasetConfig: every class needs at least one train and one test frame");
  }
  if (out_dir.empty()) throw std::invalid_argument("DatasetConfig: out_dir not set");
}

DatasetManifest build_dataset(const DatasetConfig& cfg, uint64_t seed) {
  cfg.validate();
  namespace fs = std::filesystem;
  fs::create_directories(fs::path(cfg.out_dir) / "frames");

  DatasetManifest manifest;
  manifest.seed = seed;
  manifest.mode = cfg.mode;
  manifest.train_count = cfg.train_count;
  manifest.test_count = cfg.test_count;

  uint64_t id = 0;
  for (int c = 0; c < kNumWeather; ++c) {
    const Weather weather = static_cast<Weather>(c);
    const int total = cfg.train_count[c] + cfg.test_count[c];
    for (int j = 0; j < total; ++j, ++id) {
      nn::Rng rng(seed ^ id);  // per-frame derived stream
      Frame frame = generate_scene(rng, cfg.scene);
      if (weather != Weather::kNormal) frame = apply_weather(frame, weather, rng, cfg.weather);
      frame.id = id;

      char name[32];
      std::snprintf(name, sizeof(name), "frames/%06llu.awfr", static_cast<unsigned long long>(id));
      save_frame((fs::path(cfg.out_dir) / name).string(), frame);
      manifest.frames.push_back({id, weather, j < cfg.train_count[c], name});
    }
  }
  save_manifest((fs::path(cfg.out_dir) / "manifest.txt").string(), manifest);
  return manifest;
}

void save_manifest(const std::string& path, const DatasetManifest& m) {
  std::ostringstream os;
  os << "awmoe-dataset v1\n";
  os << "seed " << m.seed << "\n";
  os << "mode " << m.mode << "\n";
  os << "counts_train";
  for (int v : m.train_count) os << " " << v;
  os << "\ncounts_test";
  for (int v : m.test_count) os << " " << v;
  os << "\nframes " << m.frames.size() << "\n";
  for (const auto& e : m.frames)
    os << "frame " << e.id << " " << weather_token(e.weather) << " "
       << (e.is_train ? "train" : "test") << " " << e.file << "\n";
  std::ofstream f(path, std::ios::trunc);
  if (!f) throw std::runtime_error("manifest: cannot open for write: " + path);
  f << os.str();
}

DatasetManifest load_manifest(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw std::runtime_error("manifest: cannot open: " + path);
  std::string header;
  std::getline(f, header);
  if (header != "awmoe-dataset v1") throw std::runtime_error("manifest: unsupported schema");
  DatasetManifest m;
  std::string key;
  size_t frame_count = 0;
  while (f >> key) {
    if (key == "seed") {
      f >> m.seed;
    } else if (key == "mode") {
      f >> m.mode;
    } else if (key == "counts_train") {
      for (auto& v : m.train_count) f >> v;
    } else if (key == "counts_test") {
      for (auto& v : m.test_count) f >> v;
    } else if (key == "frames") {
      f >> frame_count;
    } else if (key == "frame") {
      ManifestEntry e;
      std::string token, split;
      f >> e.id >> token >> split >> e.file;
      e.weather = weather_from_token(token);
      e.is_train = split == "train";
      m.frames.push_back(e);
    } else {
      throw std::runtime_error("manifest: unknown key: " + key);
    }
  }
  if (m.frames.size() != frame_count) throw std::runtime_error("manifest: frame count mismatch");
  return m;
}

std::vector<Frame> load_frames(const DatasetManifest& m, const std::string& dir, bool train_split) {
  namespace fs = std::filesystem;
  std::vector<Frame> out;
  for (const auto& e : m.frames) {
    if (e.is_train != train_split) continue;
    out.push_back(load_frame((fs::path(dir) / e.file).string()));
  }
  return out;
}

}  // namespace awmoe::sim
