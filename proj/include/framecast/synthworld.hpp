#pragma once

// Deterministic synthetic stand-in for the vehicle scenarios: an egocentric
// forward view rendered while the agent loops a rounded-rectangle perimeter.
// Scenario I is plain perimeter monitoring; scenario II adds stationary
// obstacles on the path and a veer-out/pass/veer-back detour around each,
// with ground-truth novelty labels from trigger to rejoin.

#include <cstddef>
#include <filesystem>
#include <utility>
#include <vector>

#include "framecast/vae.hpp"

namespace framecast {

struct WorldConfig {
  double arena_width = 40.0;   // cells
  double arena_height = 30.0;  // cells
  double margin = 5.0;         // path inset from the arena edge
  double corner_radius = 3.0;
  std::size_t frame_width = 24;
  std::size_t frame_height = 24;
  double speed = 0.45;  // cells per frame
  std::size_t laps = 3;
  int scenario = 1;  // 1 or 2
  std::vector<std::pair<double, double>> obstacles;  // scenario II; on-path cells
  double detour_offset = 3.2;  // lateral cells, to the left of travel
  double detour_ramp = 8.0;    // cells to veer out (and back in)
  double detour_hold = 8.0;    // cells at full offset
  double pixel_noise = 0.0;    // optional Gaussian sigma
  std::uint64_t seed = 0;
};

struct Pose {
  double x = 0.0;
  double y = 0.0;
  double heading = 0.0;  // radians, screen coords (y down)
};

struct LabeledSequence {
  std::vector<Frame> frames;
  std::vector<int> labels;  // 0 known, 1 novel
  std::vector<Pose> poses;
};

// Rounded-rectangle perimeter, clockwise in screen coordinates.
class PerimeterPath {
 public:
  explicit PerimeterPath(const WorldConfig& config);
  double lap_length() const { return lap_length_; }
  Pose pose_at(double s) const;  // s wraps modulo the lap length
  // Arc position of the closest path point; distance via `dist_out`.
  double project(double x, double y, double* dist_out = nullptr) const;

 private:
  struct Piece {
    bool arc;
    double length;
    double x, y;            // straight start  / arc center
    double dx, dy;          // straight direction
    double radius, angle0;  // arc geometry
  };
  std::vector<Piece> pieces_;
  double lap_length_ = 0.0;
};

// Egocentric rendering of one pose; deterministic, anti-aliased to [0, 1].
// Throws DataError when the pose leaves the arena.
Frame render_frame(const Pose& pose, const WorldConfig& config);

// The default two obstacles: midpoints of the top and bottom straights.
std::vector<std::pair<double, double>> default_obstacles(const WorldConfig& config);

LabeledSequence generate_scenario(const WorldConfig& config);

// Dataset directory: frames/frame_%06d.pgm + labels.csv + poses.csv.
void save_dataset(const LabeledSequence& seq, const std::filesystem::path& dir);
std::vector<Frame> load_dataset_frames(const std::filesystem::path& dir);
std::vector<int> read_labels_csv(const std::filesystem::path& path);

}  // namespace framecast
