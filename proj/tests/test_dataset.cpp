// Copyright 2026 The kinoplan Authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#include "kinoplan/dataset.hpp"

#include <cstdio>
#include <filesystem>

#include "gtest/gtest.h"

namespace kinoplan {
namespace {

const VehicleModel kModel(0.5, 0.3, 0.7);

Costmap empty_map(int l, double res, const std::string& id) {
  return Costmap(l, res, Pose2D(0, 0, 0), 0, id);
}

TrajectoryRecord straight_record(int n_poses, double spacing = 0.2, double x0 = 5.0,
                                 double y0 = 5.0) {
  TrajectoryRecord rec;
  rec.map_id = "m";
  rec.source_seed = 1;
  for (int i = 0; i < n_poses; ++i) rec.poses.emplace_back(x0 + i * spacing, y0, 0.0);
  return rec;
}

RRTStarConfig quick_rrt(int iters = 1200) {
  RRTStarConfig cfg;
  cfg.max_iterations = iters;
  cfg.stop_at_first_solution = true;
  return cfg;
}

TEST(Collect, IndependentOfWorkerCount) {
  const std::vector<Costmap> maps = {empty_map(40, 0.1, "a"), empty_map(36, 0.1, "b")};
  CollectOptions opts;
  opts.max_pair_distance = 3.0;
  const auto r1 = collect(maps, 10, kModel, quick_rrt(), 99, 1, opts);
  const auto r4 = collect(maps, 10, kModel, quick_rrt(), 99, 4, opts);
  ASSERT_EQ(r1.size(), r4.size());
  for (std::size_t i = 0; i < r1.size(); ++i) {
    ASSERT_EQ(r1[i].map_id, r4[i].map_id);
    ASSERT_EQ(r1[i].source_seed, r4[i].source_seed);
    ASSERT_EQ(r1[i].poses.size(), r4[i].poses.size());
    for (std::size_t k = 0; k < r1[i].poses.size(); ++k) {
      ASSERT_EQ(r1[i].poses[k], r4[i].poses[k]);
    }
  }
  // Output ordering contract.
  for (std::size_t i = 1; i < r1.size(); ++i) {
    ASSERT_LE(std::make_pair(r1[i - 1].map_id, r1[i - 1].source_seed),
              std::make_pair(r1[i].map_id, r1[i].source_seed));
  }
}

TEST(Collect, ZeroRequestsYieldEmpty) {
  const std::vector<Costmap> maps = {empty_map(20, 0.1, "a")};
  EXPECT_TRUE(collect(maps, 0, kModel, quick_rrt(), 1, 2).empty());
}

TEST(Collect, RejectsDegenerateMap) {
  Costmap solid(4, 0.1, Pose2D(0, 0, 0), kLethalCost, "solid");
  solid.at(1, 1) = 0;  // a single free cell
  EXPECT_THROW(collect({solid}, 5, kModel, quick_rrt(), 1, 1), std::invalid_argument);
}

TEST(Collect, EmptyMapProblemsNearlyAlwaysSolve) {
  const std::vector<Costmap> maps = {empty_map(20, 0.2, "open")};  // 4 m x 4 m
  CollectOptions opts;
  opts.min_pair_distance = 0.4;
  opts.max_pair_distance = 3.5;
  const auto records = collect(maps, 100, kModel, quick_rrt(3000), 7, 4, opts);
  EXPECT_GE(records.size(), 95u);
  for (const auto& rec : records) {
    ASSERT_GE(rec.poses.size(), 2u);
  }
}

TEST(Collect, RecordWaypointsSteerable) {
  const std::vector<Costmap> maps = {empty_map(40, 0.1, "a")};
  CollectOptions opts;
  opts.max_pair_distance = 3.0;
  const auto records = collect(maps, 6, kModel, quick_rrt(), 5, 2, opts);
  ASSERT_FALSE(records.empty());
  for (const auto& rec : records) {
    for (std::size_t k = 1; k < rec.poses.size(); ++k) {
      ASSERT_TRUE(
          steer(rec.poses[k - 1], rec.poses[k], maps[0], kModel, 1.0, 0.05).has_value());
    }
  }
}

TEST(Augment, ThreePoseRecordEmitsExactlyOne) {
  const auto subs = augment(straight_record(3), 4.0);
  ASSERT_EQ(subs.size(), 1u);
  EXPECT_EQ(subs[0].poses.size(), 3u);
}

TEST(Augment, CombinatorialCountOnFittingRecord) {
  for (int n : {3, 5, 9, 14}) {
    const auto subs = augment(straight_record(n), 40.0);
    EXPECT_EQ(subs.size(), static_cast<std::size_t>((n - 1) * (n - 2) / 2)) << "n=" << n;
  }
}

TEST(Augment, SubPathsRespectWindow) {
  // 12 m straight record, 4 m window: emitted pieces must all fit.
  const auto subs = augment(straight_record(61), 4.0);
  ASSERT_FALSE(subs.empty());
  for (const auto& sub : subs) {
    double min_x = sub.poses.front().x, max_x = min_x;
    for (const auto& p : sub.poses) {
      min_x = std::min(min_x, p.x);
      max_x = std::max(max_x, p.x);
    }
    ASSERT_LE(max_x - min_x, 4.0 + 1e-12);
  }
}

TEST(EncodeSample, EgocentricNormalization) {
  const Costmap map = empty_map(200, 0.1, "m");
  TrajectoryRecord rec = straight_record(6);  // goal 1 m ahead of s_0
  const auto tuple = encode_sample(rec, 0, map, 40);
  ASSERT_TRUE(tuple.has_value());
  EXPECT_EQ(tuple->current[0], 0.0);
  EXPECT_EQ(tuple->current[1], 0.0);
  EXPECT_NEAR(tuple->current[2], 1.0, 1e-12);
  EXPECT_NEAR(tuple->goal[0], 0.25, 1e-12);  // +1 m over a 4 m half-extent
  EXPECT_NEAR(tuple->goal[1], 0.0, 1e-12);
  EXPECT_NEAR(tuple->target[0], 0.05, 1e-12);  // one 0.2 m step
  EXPECT_EQ(tuple->patch.size(), 80u * 80u);
  const double qsum = tuple->goal[2] * tuple->goal[2] + tuple->goal[3] * tuple->goal[3];
  EXPECT_NEAR(qsum, 1.0, 1e-6);
}

TEST(EncodeSample, DecodeRoundTrip) {
  const Costmap map = empty_map(200, 0.1, "m");
  Rng rng(3);
  for (int trial = 0; trial < 50; ++trial) {
    TrajectoryRecord rec;
    rec.map_id = "m";
    for (int k = 0; k < 4; ++k) {
      rec.poses.emplace_back(8.0 + rng.uniform(-1.5, 1.5), 8.0 + rng.uniform(-1.5, 1.5),
                             rng.uniform(-kPi, kPi));
    }
    const auto tuple = encode_sample(rec, 1, map, 40);
    ASSERT_TRUE(tuple.has_value());
    const double half = 40 * 0.1;
    const Pose2D back = decode_state(tuple->target, rec.poses[1], half);
    ASSERT_NEAR(back.x, rec.poses[2].x, 1e-9);
    ASSERT_NEAR(back.y, rec.poses[2].y, 1e-9);
    ASSERT_NEAR(std::abs(wrap_angle(back.theta - rec.poses[2].theta)), 0.0, 1e-9);
  }
}

TEST(EncodeSample, GoalOutsidePaddedWindowSkipped) {
  const Costmap map = empty_map(200, 0.1, "m");
  TrajectoryRecord rec = straight_record(30);  // 5.8 m long, beyond the 4 m half-extent
  EXPECT_FALSE(encode_sample(rec, 0, map, 40).has_value());
  EXPECT_THROW(encode_sample(rec, 29, map, 40), std::out_of_range);
}

TEST(EncodeSample, TargetSteerableInsidePatch) {
  const Costmap map = empty_map(200, 0.1, "m");
  const std::vector<Costmap> maps = {map};
  CollectOptions opts;
  opts.max_pair_distance = 3.0;
  const auto records = collect(maps, 4, kModel, quick_rrt(), 21, 2, opts);
  ASSERT_FALSE(records.empty());
  int checked = 0;
  for (const auto& rec : records) {
    for (const auto& sub : augment(rec, 4.0)) {
      for (std::size_t t = 0; t + 1 < sub.poses.size(); ++t) {
        const auto tuple = encode_sample(sub, t, map, 40);
        if (!tuple) continue;
        // Rebuild the egocentric grid the patch came from and steer on it.
        const Costmap window = detail::extract_window(map, sub.poses[t], 40);
        const PaddedCostmap ego = transform_egocentric(pad(window), sub.poses[t]);
        ASSERT_EQ(ego.grid.cells, tuple->patch);
        const Pose2D cur = decode_state(tuple->current, sub.poses[t], 4.0);
        const Pose2D nxt = decode_state(tuple->target, sub.poses[t], 4.0);
        ASSERT_TRUE(steer(cur, nxt, ego.grid, kModel, 1.0, 0.05).has_value());
        ++checked;
      }
      if (checked > 200) return;
    }
  }
  ASSERT_GT(checked, 20);
}

class DatasetIoTest : public ::testing::Test {
 protected:
  void SetUp() override {
    path_ = std::filesystem::temp_directory_path() / "kinoplan_dataset_test.kpds";
  }
  void TearDown() override { std::filesystem::remove(path_); }
  std::filesystem::path path_;
};

Dataset tiny_dataset(int l = 8, int tuples = 5) {
  Dataset ds;
  ds.patch_l = l;
  ds.resolution = 0.1;
  Rng rng(77);
  for (int i = 0; i < tuples; ++i) {
    TrainingTuple t;
    const double th = rng.uniform(-kPi, kPi);
    t.current = {0.0, 0.0, std::cos(th), std::sin(th)};
    t.goal = {rng.uniform(-1, 1), rng.uniform(-1, 1), std::cos(th), std::sin(th)};
    t.target = {rng.uniform(-1, 1), rng.uniform(-1, 1), std::cos(th), std::sin(th)};
    t.patch.resize(static_cast<std::size_t>(2 * l) * static_cast<std::size_t>(2 * l));
    for (auto& c : t.patch) c = static_cast<std::uint8_t>(rng.next_below(256));
    ds.tuples.push_back(std::move(t));
  }
  return ds;
}

TEST_F(DatasetIoTest, RoundTripElementwiseIdentical) {
  const Dataset ds = tiny_dataset();
  save_dataset(path_.string(), ds);
  const Dataset back = load_dataset(path_.string());
  ASSERT_EQ(back.tuples.size(), ds.tuples.size());
  EXPECT_EQ(back.patch_l, ds.patch_l);
  for (std::size_t i = 0; i < ds.tuples.size(); ++i) {
    EXPECT_EQ(back.tuples[i].patch, ds.tuples[i].patch);
    for (int k = 0; k < 4; ++k) {
      // The format stores f32; loaded values must match at that precision.
      EXPECT_EQ(static_cast<float>(ds.tuples[i].current[static_cast<std::size_t>(k)]),
                static_cast<float>(back.tuples[i].current[static_cast<std::size_t>(k)]));
      EXPECT_EQ(static_cast<float>(ds.tuples[i].goal[static_cast<std::size_t>(k)]),
                static_cast<float>(back.tuples[i].goal[static_cast<std::size_t>(k)]));
      EXPECT_EQ(static_cast<float>(ds.tuples[i].target[static_cast<std::size_t>(k)]),
                static_cast<float>(back.tuples[i].target[static_cast<std::size_t>(k)]));
    }
  }
  // A second round trip is bit-stable even at double precision.
  save_dataset(path_.string(), back);
  const Dataset again = load_dataset(path_.string());
  for (std::size_t i = 0; i < back.tuples.size(); ++i) {
    EXPECT_EQ(again.tuples[i].current, back.tuples[i].current);
    EXPECT_EQ(again.tuples[i].goal, back.tuples[i].goal);
    EXPECT_EQ(again.tuples[i].target, back.tuples[i].target);
  }
}

TEST_F(DatasetIoTest, EmptyDatasetRoundTrips) {
  Dataset ds;
  ds.patch_l = 16;
  ds.resolution = 0.25;
  save_dataset(path_.string(), ds);
  const Dataset back = load_dataset(path_.string());
  EXPECT_EQ(back.tuples.size(), 0u);
  EXPECT_EQ(back.patch_l, 16);
  EXPECT_NEAR(back.resolution, 0.25, 1e-7);
}

TEST_F(DatasetIoTest, DistinctErrorsForCorruption) {
  save_dataset(path_.string(), tiny_dataset());
  std::vector<char> raw;
  {
    std::ifstream in(path_, std::ios::binary);
    raw.assign((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  }

  auto write_raw = [&](const std::vector<char>& bytes) {
    std::ofstream out(path_, std::ios::binary | std::ios::trunc);
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  };

  // Flipped version byte -> version mismatch (CRC re-stamped so it parses).
  {
    std::vector<char> bad = raw;
    bad[4] = 2;
    bad.resize(bad.size() - 4);
    const auto crc = static_cast<std::uint32_t>(
        ::crc32(0L, reinterpret_cast<const Bytef*>(bad.data()), static_cast<uInt>(bad.size())));
    for (int i = 0; i < 4; ++i) bad.push_back(static_cast<char>((crc >> (8 * i)) & 0xff));
    write_raw(bad);
    try {
      load_dataset(path_.string());
      FAIL() << "expected version mismatch";
    } catch (const IoError& e) {
      EXPECT_EQ(e.kind, IoError::Kind::VersionMismatch);
    }
  }

  // Corrupted payload byte -> checksum failure.
  {
    std::vector<char> bad = raw;
    bad[30] = static_cast<char>(bad[30] ^ 0x5a);
    write_raw(bad);
    try {
      load_dataset(path_.string());
      FAIL() << "expected checksum error";
    } catch (const IoError& e) {
      EXPECT_EQ(e.kind, IoError::Kind::ChecksumMismatch);
    }
  }

  // Truncated file -> truncation (re-stamped CRC, shortened payload).
  {
    std::vector<char> bad = raw;
    bad.resize(bad.size() - 40);
    const auto crc = static_cast<std::uint32_t>(
        ::crc32(0L, reinterpret_cast<const Bytef*>(bad.data()), static_cast<uInt>(bad.size())));
    for (int i = 0; i < 4; ++i) bad.push_back(static_cast<char>((crc >> (8 * i)) & 0xff));
    write_raw(bad);
    try {
      load_dataset(path_.string());
      FAIL() << "expected truncation error";
    } catch (const IoError& e) {
      EXPECT_EQ(e.kind, IoError::Kind::Truncated);
    }
  }
}

TEST(BuildTrainingSet, DeterministicAndCapped) {
  const Costmap map = empty_map(200, 0.1, "m");
  std::vector<TrajectoryRecord> records;
  for (int r = 0; r < 3; ++r) {
    auto rec = straight_record(10, 0.2, 4.0 + r, 5.0);
    rec.source_seed = static_cast<std::uint64_t>(r);
    records.push_back(rec);
  }
  BuildStats stats;
  const Dataset full = build_training_set(records, {map}, 40, 0, 9, &stats);
  EXPECT_EQ(stats.subpaths, 3u * 36u);
  EXPECT_GT(full.tuples.size(), 100u);
  const Dataset capped1 = build_training_set(records, {map}, 40, 50, 9);
  const Dataset capped2 = build_training_set(records, {map}, 40, 50, 9);
  ASSERT_EQ(capped1.tuples.size(), 50u);
  for (std::size_t i = 0; i < 50; ++i) {
    EXPECT_EQ(capped1.tuples[i].goal, capped2.tuples[i].goal);
    EXPECT_EQ(capped1.tuples[i].patch, capped2.tuples[i].patch);
  }
}

}  // namespace
}  // namespace kinoplan
