#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cmath>
#include <filesystem>

#include "framecast/synthworld.hpp"
#include "test_util.hpp"

using namespace framecast;

TEST_CASE("perimeter path closes and wraps") {
  WorldConfig cfg;
  PerimeterPath path(cfg);
  CHECK(path.lap_length() ==
        doctest::Approx(2 * 24.0 + 2 * 14.0 + 2 * std::numbers::pi * 3.0));

  Pose start = path.pose_at(0.0);
  Pose wrapped = path.pose_at(path.lap_length());
  CHECK(std::hypot(start.x - wrapped.x, start.y - wrapped.y) <= 1e-9);

  // The path stays inside the arena.
  for (double s = 0.0; s < path.lap_length(); s += 0.5) {
    Pose p = path.pose_at(s);
    CHECK(p.x >= 0.0);
    CHECK(p.x <= cfg.arena_width);
    CHECK(p.y >= 0.0);
    CHECK(p.y <= cfg.arena_height);
  }
}

TEST_CASE("render_frame is deterministic and validates the pose") {
  WorldConfig cfg;
  Pose pose{12.0, 5.0, 0.0};
  Frame a = render_frame(pose, cfg);
  Frame b = render_frame(pose, cfg);
  CHECK(a.pixels == b.pixels);
  validate_frame(a);

  CHECK_THROWS_AS(render_frame(Pose{-1.0, 5.0, 0.0}, cfg), DataError);
  CHECK_THROWS_AS(render_frame(Pose{5.0, 31.0, 0.0}, cfg), DataError);
}

TEST_CASE("out-of-view obstacles do not change the rendering") {
  WorldConfig plain;
  WorldConfig with_obstacle = plain;
  with_obstacle.obstacles = {{20.0, 25.0}};

  // Top straight heading east; the obstacle sits on the bottom straight,
  // well out of range.
  Pose pose{8.0, 5.0, 0.0};
  CHECK(render_frame(pose, plain).pixels == render_frame(pose, with_obstacle).pixels);
}

TEST_CASE("an obstacle directly ahead fills a tenth of the frame") {
  WorldConfig plain;
  WorldConfig blocked = plain;
  blocked.obstacles = {{20.0, 5.0}};

  Pose pose{18.5, 5.0, 0.0};  // 1.5 cells short, facing it
  Frame without = render_frame(pose, plain);
  Frame with = render_frame(pose, blocked);
  std::size_t changed = 0;
  for (std::size_t i = 0; i < with.pixels.size(); ++i)
    if (std::abs(with.pixels[i] - without.pixels[i]) > 0.05) ++changed;
  CHECK(changed >= with.pixels.size() / 10);
}

TEST_CASE("scenario I: all labels known, poses close each lap") {
  WorldConfig cfg;
  cfg.laps = 2;
  cfg.seed = 5;
  LabeledSequence seq = generate_scenario(cfg);
  REQUIRE(!seq.frames.empty());
  CHECK(seq.frames.size() == seq.labels.size());
  CHECK(seq.frames.size() == seq.poses.size());
  for (int label : seq.labels) CHECK(label == 0);

  PerimeterPath path(cfg);
  const std::size_t per_lap = static_cast<std::size_t>(path.lap_length() / cfg.speed);
  REQUIRE(seq.poses.size() > per_lap);
  const Pose& start = seq.poses[0];
  const Pose& after_lap = seq.poses[per_lap];
  CHECK(std::hypot(start.x - after_lap.x, start.y - after_lap.y) <= 1.0);
}

TEST_CASE("scenario II: two novel segments per lap, more frames than scenario I") {
  WorldConfig cfg1;
  cfg1.laps = 2;
  WorldConfig cfg2 = cfg1;
  cfg2.scenario = 2;

  LabeledSequence seq1 = generate_scenario(cfg1);
  LabeledSequence seq2 = generate_scenario(cfg2);
  CHECK(seq2.frames.size() >= seq1.frames.size());

  // Count maximal novel runs.
  std::size_t segments = 0;
  for (std::size_t i = 0; i < seq2.labels.size(); ++i)
    if (seq2.labels[i] == 1 && (i == 0 || seq2.labels[i - 1] == 0)) ++segments;
  CHECK(segments == 2 * cfg2.laps);

  std::size_t novel = 0;
  for (int l : seq2.labels) novel += l;
  CHECK(novel > 0);
  CHECK(novel < seq2.labels.size());
}

TEST_CASE("every novel frame is visibly different from the nearest known pose") {
  WorldConfig cfg1;
  cfg1.laps = 1;
  WorldConfig cfg2 = cfg1;
  cfg2.scenario = 2;

  LabeledSequence known = generate_scenario(cfg1);
  LabeledSequence novel = generate_scenario(cfg2);

  const std::size_t pixels = cfg1.frame_width * cfg1.frame_height;
  const std::size_t min_changed = pixels / 100;  // 1%
  for (std::size_t i = 0; i < novel.frames.size(); ++i) {
    if (novel.labels[i] == 0) continue;
    // Nearest scenario-I pose by position.
    std::size_t best = 0;
    double best_d = std::numeric_limits<double>::infinity();
    for (std::size_t j = 0; j < known.poses.size(); ++j) {
      const double d = std::hypot(known.poses[j].x - novel.poses[i].x,
                                  known.poses[j].y - novel.poses[i].y);
      if (d < best_d) {
        best_d = d;
        best = j;
      }
    }
    std::size_t changed = 0;
    for (std::size_t p = 0; p < pixels; ++p)
      if (std::abs(novel.frames[i].pixels[p] - known.frames[best].pixels[p]) > 1.0 / 255.0)
        ++changed;
    CHECK(changed >= min_changed);
  }
}

TEST_CASE("generation is deterministic; the noise toggle is seeded") {
  WorldConfig cfg;
  cfg.laps = 1;
  cfg.scenario = 2;
  cfg.seed = 11;

  LabeledSequence a = generate_scenario(cfg);
  LabeledSequence b = generate_scenario(cfg);
  REQUIRE(a.frames.size() == b.frames.size());
  for (std::size_t i = 0; i < a.frames.size(); ++i)
    CHECK(a.frames[i].pixels == b.frames[i].pixels);

  WorldConfig noisy = cfg;
  noisy.pixel_noise = 0.01;
  LabeledSequence c = generate_scenario(noisy);
  LabeledSequence d = generate_scenario(noisy);
  CHECK(c.labels == a.labels);
  CHECK(c.frames[5].pixels != a.frames[5].pixels);
  for (std::size_t i = 0; i < c.frames.size(); ++i) {
    validate_frame(c.frames[i]);
    CHECK(c.frames[i].pixels == d.frames[i].pixels);
  }
}

TEST_CASE("off-path obstacles are rejected") {
  WorldConfig cfg;
  cfg.scenario = 2;
  cfg.obstacles = {{20.0, 15.0}};  // arena middle, far from the path
  CHECK_THROWS_AS(generate_scenario(cfg), DataError);
}

TEST_CASE("dataset round-trip: PGM + labels") {
  WorldConfig cfg;
  cfg.laps = 1;
  cfg.scenario = 2;
  LabeledSequence seq = generate_scenario(cfg);

  const auto dir = testutil::fresh_dir("dataset");
  save_dataset(seq, dir);
  auto frames = load_dataset_frames(dir);
  auto labels = read_labels_csv(dir / "labels.csv");
  REQUIRE(frames.size() == seq.frames.size());
  CHECK(labels == seq.labels);
  // Quantized pixels survive the round trip.
  for (std::size_t p = 0; p < frames[0].pixels.size(); ++p)
    CHECK(std::abs(frames[0].pixels[p] - seq.frames[0].pixels[p]) <= 0.5 / 255.0 + 1e-12);
  std::filesystem::remove_all(dir);
}
