#include "framecast/synthworld.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numbers>
#include <sstream>

namespace framecast {

namespace {

constexpr double kPi = std::numbers::pi;

double logistic(double x) { return 1.0 / (1.0 + std::exp(-x)); }

double smoothstep(double t) {
  t = std::clamp(t, 0.0, 1.0);
  return t * t * (3.0 - 2.0 * t);
}

}  // namespace

PerimeterPath::PerimeterPath(const WorldConfig& config) {
  const double x0 = config.margin;
  const double y0 = config.margin;
  const double x1 = config.arena_width - config.margin;
  const double y1 = config.arena_height - config.margin;
  const double rc = config.corner_radius;
  const double lx = (x1 - x0) - 2.0 * rc;
  const double ly = (y1 - y0) - 2.0 * rc;
  if (lx <= 0.0 || ly <= 0.0 || rc <= 0.0)
    throw ConfigError("perimeter path: margin/corner radius do not fit the arena");
  const double arc = 0.5 * kPi * rc;

  // Clockwise on screen (y down), starting on the top straight heading +x.
  pieces_ = {
      {false, lx, x0 + rc, y0, 1.0, 0.0, 0.0, 0.0},
      {true, arc, x1 - rc, y0 + rc, 0.0, 0.0, rc, -0.5 * kPi},
      {false, ly, x1, y0 + rc, 0.0, 1.0, 0.0, 0.0},
      {true, arc, x1 - rc, y1 - rc, 0.0, 0.0, rc, 0.0},
      {false, lx, x1 - rc, y1, -1.0, 0.0, 0.0, 0.0},
      {true, arc, x0 + rc, y1 - rc, 0.0, 0.0, rc, 0.5 * kPi},
      {false, ly, x0, y1 - rc, 0.0, -1.0, 0.0, 0.0},
      {true, arc, x0 + rc, y0 + rc, 0.0, 0.0, rc, kPi},
  };
  lap_length_ = 0.0;
  for (const Piece& p : pieces_) lap_length_ += p.length;
}

Pose PerimeterPath::pose_at(double s) const {
  s = std::fmod(s, lap_length_);
  if (s < 0.0) s += lap_length_;
  for (const Piece& p : pieces_) {
    if (s > p.length) {
      s -= p.length;
      continue;
    }
    Pose pose;
    if (!p.arc) {
      pose.x = p.x + p.dx * s;
      pose.y = p.y + p.dy * s;
      pose.heading = std::atan2(p.dy, p.dx);
    } else {
      const double a = p.angle0 + s / p.radius;
      pose.x = p.x + p.radius * std::cos(a);
      pose.y = p.y + p.radius * std::sin(a);
      pose.heading = std::atan2(std::cos(a), -std::sin(a));
    }
    return pose;
  }
  return pose_at(0.0);  // s == lap_length_ exactly
}

double PerimeterPath::project(double x, double y, double* dist_out) const {
  double best_s = 0.0;
  double best_d = std::numeric_limits<double>::infinity();
  for (double s = 0.0; s < lap_length_; s += 0.02) {
    const Pose p = pose_at(s);
    const double d = std::hypot(p.x - x, p.y - y);
    if (d < best_d) {
      best_d = d;
      best_s = s;
    }
  }
  if (dist_out) *dist_out = best_d;
  return best_s;
}

Frame render_frame(const Pose& pose, const WorldConfig& config) {
  if (pose.x < 0.0 || pose.x > config.arena_width || pose.y < 0.0 ||
      pose.y > config.arena_height)
    throw DataError("render_frame: pose outside arena");

  const std::size_t width = config.frame_width;
  const std::size_t height = config.frame_height;
  const double hd = static_cast<double>(height);
  const double horizon = 0.375 * hd;  // row of the wall/floor split
  const double focal = 0.75 * hd;

  const double ch = std::cos(pose.heading);
  const double sh = std::sin(pose.heading);

  // Distance to the arena wall along the heading ray.
  double d_wall = std::numeric_limits<double>::infinity();
  if (ch > 1e-12) d_wall = std::min(d_wall, (config.arena_width - pose.x) / ch);
  if (ch < -1e-12) d_wall = std::min(d_wall, (0.0 - pose.x) / ch);
  if (sh > 1e-12) d_wall = std::min(d_wall, (config.arena_height - pose.y) / sh);
  if (sh < -1e-12) d_wall = std::min(d_wall, (0.0 - pose.y) / sh);
  const double wall_h = std::clamp(16.0 / (0.35 * d_wall + 1.0), 0.8, horizon + 5.0);
  const double wall_top = horizon - wall_h;

  Frame frame{width, height, std::vector<double>(width * height)};
  for (std::size_t r = 0; r < height; ++r) {
    const double rd = static_cast<double>(r);
    for (std::size_t c = 0; c < width; ++c) {
      const double u = 2.0 * static_cast<double>(c) / static_cast<double>(width - 1) - 1.0;
      double val;
      if (rd < horizon) {
        const double sky = 0.82 - 0.10 * rd / hd;
        const double wall = 0.30 + 0.08 * ch + 0.05 * u * sh;
        val = sky + (wall - sky) * logistic((rd - wall_top) * 1.8);
      } else {
        // Project the pixel onto the ground plane ahead of the agent.
        const double g = focal / (rd - horizon + 1.0);
        const double lat = 0.45 * u * g;
        const double px = pose.x + ch * g + sh * lat;
        const double py = pose.y + sh * g - ch * lat;
        val = 0.50 + 0.12 * u * ch - 0.08 * u * sh +
              0.07 * std::cos(2.0 * kPi * (px + py) / (3.0 * std::numbers::sqrt2));
      }

      for (const auto& [ox, oy] : config.obstacles) {
        const double dx = ox - pose.x;
        const double dy = oy - pose.y;
        const double dist = std::hypot(dx, dy);
        const double fwd = dx * ch + dy * sh;
        if (fwd <= 0.4 || dist >= 14.0) continue;
        const double lat_o = dx * sh - dy * ch;  // left of travel positive
        const double bearing = std::atan2(lat_o, fwd);
        if (std::abs(bearing) >= 0.9) continue;
        const double col_c = 0.5 * static_cast<double>(width - 1) * (1.0 - bearing / 0.9);
        const double fwd_c = std::max(fwd, 0.8);
        const double radius = 10.0 / fwd_c;
        const double row_c = horizon - 1.0 + focal / fwd_c - 0.6 * radius;
        const double d_px = std::hypot(rd - row_c, static_cast<double>(c) - col_c);
        const double vis =
            logistic((0.9 - std::abs(bearing)) * 8.0) * logistic((14.0 - dist) * 2.0);
        const double m = logistic((radius - d_px) * 1.6) * vis;
        val = val + (0.08 - val) * m;
      }
      frame.pixels[r * width + c] = std::clamp(val, 0.0, 1.0);
    }
  }
  return frame;
}

std::vector<std::pair<double, double>> default_obstacles(const WorldConfig& config) {
  // Off-center along each horizontal straight so no detour span straddles
  // the lap origin.
  const double x0 = config.margin + config.corner_radius;
  const double lx = config.arena_width - 2.0 * (config.margin + config.corner_radius);
  return {{x0 + 0.6 * lx, config.margin},
          {x0 + 0.4 * lx, config.arena_height - config.margin}};
}

LabeledSequence generate_scenario(const WorldConfig& config) {
  if (config.scenario != 1 && config.scenario != 2)
    throw ConfigError("generate_scenario: scenario must be 1 or 2");
  if (config.speed <= 0.0) throw ConfigError("generate_scenario: speed must be positive");
  const PerimeterPath path(config);

  WorldConfig world = config;
  if (world.scenario == 2 && world.obstacles.empty())
    world.obstacles = default_obstacles(world);
  if (world.scenario == 1) world.obstacles.clear();

  // Detour spans along the base path, one per obstacle: trigger at the ramp
  // start, rejoin at the ramp end.
  struct Span {
    double start;
    double length;
  };
  const double span_len = 2.0 * world.detour_ramp + world.detour_hold;
  std::vector<Span> spans;
  for (const auto& [ox, oy] : world.obstacles) {
    double dist = 0.0;
    const double s_obs = path.project(ox, oy, &dist);
    if (dist > 0.5)
      throw DataError("generate_scenario: obstacle off-path at (" + std::to_string(ox) +
                      ", " + std::to_string(oy) + ")");
    double start = std::fmod(s_obs - 0.5 * span_len, path.lap_length());
    if (start < 0.0) start += path.lap_length();
    spans.push_back({start, span_len});
  }

  auto lateral_offset = [&](double s_lap) {
    double offset = 0.0;
    for (const Span& span : spans) {
      double t = s_lap - span.start;
      if (t < 0.0) t += path.lap_length();
      if (t < 0.0 || t > span.length) continue;
      if (t < world.detour_ramp)
        offset += world.detour_offset * smoothstep(t / world.detour_ramp);
      else if (t <= world.detour_ramp + world.detour_hold)
        offset += world.detour_offset;
      else
        offset += world.detour_offset *
                  smoothstep((span.length - t) / world.detour_ramp);
    }
    return offset;
  };
  auto in_span = [&](double s_lap) {
    for (const Span& span : spans) {
      double t = s_lap - span.start;
      if (t < 0.0) t += path.lap_length();
      if (t >= 0.0 && t <= span.length) return true;
    }
    return false;
  };

  // Dense polyline of the (possibly offset) trajectory, then a constant-speed
  // walk along its arc length.
  const double ds = 0.02;
  const double total_s = static_cast<double>(world.laps) * path.lap_length();

  LabeledSequence seq;
  Rng rng(world.seed);
  double prev_x = 0.0, prev_y = 0.0;
  bool have_prev = false;
  double accumulated = 0.0;
  double next_emit = 0.0;

  for (double s = 0.0; s < total_s; s += ds) {
    const double s_lap = std::fmod(s, path.lap_length());
    const Pose base = path.pose_at(s_lap);
    const double off = lateral_offset(s_lap);
    // Left of travel in screen coordinates.
    const double lx = std::sin(base.heading);
    const double ly = -std::cos(base.heading);
    const double x = base.x + off * lx;
    const double y = base.y + off * ly;

    if (have_prev) {
      const double seg = std::hypot(x - prev_x, y - prev_y);
      while (accumulated + seg >= next_emit) {
        const double t = seg > 0.0 ? (next_emit - accumulated) / seg : 0.0;
        Pose pose;
        pose.x = prev_x + t * (x - prev_x);
        pose.y = prev_y + t * (y - prev_y);
        pose.heading = std::atan2(y - prev_y, x - prev_x);
        Frame frame = render_frame(pose, world);
        if (world.pixel_noise > 0.0) {
          for (double& p : frame.pixels)
            p = std::clamp(p + world.pixel_noise * rng.normal(), 0.0, 1.0);
        }
        seq.frames.push_back(std::move(frame));
        seq.poses.push_back(pose);
        seq.labels.push_back(in_span(s_lap) ? 1 : 0);
        next_emit += world.speed;
      }
      accumulated += seg;
    } else {
      have_prev = true;
    }
    prev_x = x;
    prev_y = y;
  }
  return seq;
}

void save_dataset(const LabeledSequence& seq, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir / "frames");
  char name[32];
  for (std::size_t i = 0; i < seq.frames.size(); ++i) {
    std::snprintf(name, sizeof(name), "frame_%06zu.pgm", i);
    write_pgm(seq.frames[i], dir / "frames" / name);
  }
  {
    std::ofstream os(dir / "labels.csv", std::ios::trunc);
    if (!os) throw IoError("cannot write labels.csv");
    os << "frame_idx,label\n";
    for (std::size_t i = 0; i < seq.labels.size(); ++i)
      os << i << ',' << (seq.labels[i] ? "novel" : "known") << '\n';
  }
  {
    std::ofstream os(dir / "poses.csv", std::ios::trunc);
    if (!os) throw IoError("cannot write poses.csv");
    os << "frame_idx,x,y,heading\n";
    for (std::size_t i = 0; i < seq.poses.size(); ++i)
      os << i << ',' << format_real(seq.poses[i].x) << ',' << format_real(seq.poses[i].y)
         << ',' << format_real(seq.poses[i].heading) << '\n';
  }
}

std::vector<Frame> load_dataset_frames(const std::filesystem::path& dir) {
  std::vector<Frame> frames;
  char name[32];
  for (std::size_t i = 0;; ++i) {
    std::snprintf(name, sizeof(name), "frame_%06zu.pgm", i);
    const auto path = dir / "frames" / name;
    if (!std::filesystem::exists(path)) break;
    frames.push_back(read_pgm(path));
  }
  if (frames.empty()) throw DataError("no frames found under " + dir.string());
  return frames;
}

std::vector<int> read_labels_csv(const std::filesystem::path& path) {
  std::ifstream is(path);
  if (!is) throw IoError("cannot open: " + path.string());
  std::string line;
  if (!std::getline(is, line)) throw IoError("empty labels file: " + path.string());
  std::vector<int> labels;
  while (std::getline(is, line)) {
    if (line.empty()) continue;
    const auto comma = line.find(',');
    if (comma == std::string::npos) throw IoError("bad labels row: " + line);
    const std::string value = line.substr(comma + 1);
    if (value == "known")
      labels.push_back(0);
    else if (value == "novel")
      labels.push_back(1);
    else
      throw IoError("unknown label: " + value);
  }
  return labels;
}

}  // namespace framecast
