#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <numeric>

#include "mtrc/synth.hpp"

using namespace mtrc;
namespace fs = std::filesystem;

namespace {

fs::path temp_dir(const char* name) {
  fs::path p = fs::temp_directory_path() / name;
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

std::string slurp(const fs::path& path) {
  std::ifstream is(path, std::ios::binary);
  return std::string(std::istreambuf_iterator<char>(is),
                     std::istreambuf_iterator<char>());
}

}  // namespace

TEST_SUITE_BEGIN("synth");

TEST_CASE("generate_workflow: degenerate ranges, order, determinism") {
  WorkflowSpec spec = WorkflowSpec::defaults();
  spec.duration_range.assign(7, {5, 5});
  auto seq = generate_workflow(spec, 42);
  CHECK(seq.size() == 35);
  for (size_t i = 0; i < seq.size(); ++i)
    CHECK(seq[i] == static_cast<int>(i / 5));

  WorkflowSpec d = WorkflowSpec::defaults();
  CHECK(generate_workflow(d, 7) == generate_workflow(d, 7));
  CHECK(generate_workflow(d, 7) != generate_workflow(d, 8));
}

TEST_CASE("generate_workflow: phases monotone, each exactly once") {
  WorkflowSpec spec = WorkflowSpec::defaults();
  for (uint64_t seed = 0; seed < 50; ++seed) {
    auto seq = generate_workflow(spec, seed);
    std::vector<int> counts(7, 0);
    for (size_t i = 0; i < seq.size(); ++i) {
      ++counts[seq[i]];
      if (i) CHECK(seq[i] >= seq[i - 1]);
    }
    for (int z = 0; z < 7; ++z) {
      CHECK(counts[z] >= spec.duration_range[z][0]);
      CHECK(counts[z] <= spec.duration_range[z][1]);
    }
  }
}

TEST_CASE("generate_workflow: empirical durations match range midpoints") {
  WorkflowSpec spec = WorkflowSpec::defaults();
  spec.duration_range = {{4, 12}, {10, 20}, {5, 25}, {8, 16}, {10, 10}, {6, 18}, {12, 24}};
  std::vector<double> sums(7, 0.0);
  const int trials = 1000;
  for (int s = 0; s < trials; ++s) {
    auto seq = generate_workflow(spec, 1000 + s);
    std::vector<int> counts(7, 0);
    for (int z : seq) ++counts[z];
    for (int z = 0; z < 7; ++z) sums[z] += counts[z];
  }
  for (int z = 0; z < 7; ++z) {
    const double mid = 0.5 * (spec.duration_range[z][0] + spec.duration_range[z][1]);
    CHECK(std::abs(sums[z] / trials - mid) <= 0.05 * mid);
  }
}

TEST_CASE("sample_tools: zero and certain probabilities") {
  WorkflowSpec spec = WorkflowSpec::defaults();
  for (auto& row : spec.tool_given_phase) row.assign(7, 0.0);
  auto seq = generate_workflow(spec, 3);
  auto tools = sample_tools(seq, spec, 4);
  for (uint8_t v : tools) CHECK(v == 0);

  spec.tool_given_phase[2].assign(7, 0.0);
  spec.tool_given_phase[2][3] = 1.0;
  tools = sample_tools(seq, spec, 4);
  for (size_t t = 0; t < seq.size(); ++t)
    CHECK(int(tools[t * 7 + 2]) == (seq[t] == 3 ? 1 : 0));
}

TEST_CASE("sample_tools: empirical conditionals converge to the spec") {
  WorkflowSpec spec = WorkflowSpec::defaults();
  spec.duration_range.assign(7, {80, 120});
  std::vector<double> present(7 * 7, 0.0), total(7, 0.0);
  int frames = 0;
  uint64_t seed = 100;
  while (frames < 100000) {
    auto seq = generate_workflow(spec, seed);
    auto tools = sample_tools(seq, spec, seed + 7777);
    for (size_t t = 0; t < seq.size(); ++t) {
      total[seq[t]] += 1.0;
      for (int c = 0; c < 7; ++c)
        present[static_cast<size_t>(c) * 7 + seq[t]] += tools[t * 7 + c];
    }
    frames += static_cast<int>(seq.size());
    ++seed;
  }
  for (int c = 0; c < 7; ++c)
    for (int z = 0; z < 7; ++z) {
      const double emp = present[static_cast<size_t>(c) * 7 + z] / total[z];
      CHECK(std::abs(emp - spec.tool_given_phase[c][z]) <= 0.03);
    }
}

TEST_CASE("render_frame: determinism and discriminability") {
  WorkflowSpec spec = WorkflowSpec::defaults();
  spec.noise_level = 0.0;
  const int64_t n = static_cast<int64_t>(spec.channels) * spec.frame_size *
                    spec.frame_size;
  std::vector<double> a(n), b(n);
  uint8_t tools[7] = {1, 0, 0, 1, 0, 0, 0};
  render_frame(2, tools, spec, 99, a.data());
  render_frame(2, tools, spec, 99, b.data());
  CHECK(a == b);

  render_frame(5, tools, spec, 99, b.data());
  CHECK(a != b);

  for (double v : a) {
    CHECK(v >= 0.0);
    CHECK(v <= 1.0);
  }
}

TEST_CASE("render_frame: nearest-centroid recovers the phase") {
  WorkflowSpec spec = WorkflowSpec::defaults();
  spec.noise_level = 0.0;
  Rng rng(2024);
  const int per_phase = 500 / 7 + 1;
  const int64_t px = static_cast<int64_t>(spec.frame_size) * spec.frame_size;
  std::vector<double> frame(static_cast<int64_t>(spec.channels) * px);

  auto mean_stats = [&](int phase, uint64_t seed, std::array<double, 3>& m) {
    uint8_t tools[7];
    for (int c = 0; c < 7; ++c)
      tools[c] = rng.bernoulli(spec.tool_given_phase[c][phase]);
    render_frame(phase, tools, spec, seed, frame.data());
    for (int c = 0; c < 3; ++c) {
      double s = 0.0;
      for (int64_t i = 0; i < px; ++i) s += frame[c * px + i];
      m[c] = s / px;
    }
  };

  std::vector<std::array<double, 3>> centroids(7, {0, 0, 0});
  for (int z = 0; z < 7; ++z) {
    for (int i = 0; i < per_phase; ++i) {
      std::array<double, 3> m;
      mean_stats(z, rng.next_u64(), m);
      for (int c = 0; c < 3; ++c) centroids[z][c] += m[c] / per_phase;
    }
  }

  int correct = 0, total = 0;
  for (int z = 0; z < 7; ++z) {
    for (int i = 0; i < per_phase; ++i) {
      std::array<double, 3> m;
      mean_stats(z, rng.next_u64(), m);
      int best = -1;
      double best_d = 1e300;
      for (int k = 0; k < 7; ++k) {
        double d = 0.0;
        for (int c = 0; c < 3; ++c)
          d += (m[c] - centroids[k][c]) * (m[c] - centroids[k][c]);
        if (d < best_d) {
          best_d = d;
          best = k;
        }
      }
      correct += best == z;
      ++total;
    }
  }
  CHECK(static_cast<double>(correct) / total > 0.95);
}

TEST_CASE("generate_dataset: split arithmetic, determinism, row counts") {
  WorkflowSpec spec = WorkflowSpec::defaults();
  spec.duration_range.assign(7, {3, 5});
  const fs::path dir = temp_dir("mtrc_synth_ds");
  auto split = generate_dataset(spec, 4, dir.string(), 11);
  CHECK(split.train_videos.size() == 2);
  CHECK(split.test_videos.size() == 2);

  // regeneration is byte-identical
  const std::string phase1 = slurp(dir / "video01-phase.txt");
  const std::string tool1 = slurp(dir / "video01-tool.txt");
  const fs::path dir2 = temp_dir("mtrc_synth_ds2");
  generate_dataset(spec, 4, dir2.string(), 11);
  CHECK(slurp(dir2 / "video01-phase.txt") == phase1);
  CHECK(slurp(dir2 / "video01-tool.txt") == tool1);
  CHECK(slurp(dir2 / "video01.frames") == slurp(dir / "video01.frames"));

  // annotation row count equals frame count
  LoadedDataset ds = load_dataset(dir.string());
  for (const auto& v : ds.videos) {
    CHECK(static_cast<int>(v.phase_labels.size()) == v.length);
    CHECK(static_cast<int>(v.tool_labels.size()) == v.length * 7);
  }
  fs::remove_all(dir);
  fs::remove_all(dir2);
}

TEST_CASE("dataset round trip reproduces the in-memory labels exactly") {
  WorkflowSpec spec = WorkflowSpec::defaults();
  spec.duration_range.assign(7, {4, 8});
  const fs::path dir = temp_dir("mtrc_synth_rt");
  generate_dataset(spec, 3, dir.string(), 77);

  LoadedDataset ds = load_dataset(dir.string());
  for (int i = 0; i < 3; ++i) {
    VideoRecord want = generate_video(
        spec, ds.videos[i].video_id,
        splitmix64(77ULL ^ (0x9e3779b9ULL * (i + 1))));
    CHECK(ds.videos[i].phase_labels == want.phase_labels);
    CHECK(ds.videos[i].tool_labels == want.tool_labels);
    // frames survive the float32 container round trip
    REQUIRE(ds.videos[i].frames.size() == want.frames.size());
    for (size_t j = 0; j < want.frames.size(); ++j)
      CHECK(ds.videos[i].frames[j] ==
            static_cast<double>(static_cast<float>(want.frames[j])));
  }
  fs::remove_all(dir);
}

TEST_CASE("load_annotations: fps subsampling and drop handling") {
  const fs::path dir = temp_dir("mtrc_synth_ann");
  {
    std::ofstream p(dir / "p.txt");
    p << "Frame\tPhase\n";
    for (int f = 0; f < 100; ++f)
      p << f << '\t' << kPhaseNames[(f / 30) % 7] << '\n';
    std::ofstream t(dir / "t.txt");
    t << "Frame";
    for (auto* n : kToolNames) t << '\t' << n;
    t << '\n';
    for (int f = 0; f < 100; f += 25)
      t << f << "\t1\t0\t0\t0\t1\t0\t0\n";
  }
  auto al = load_annotations((dir / "p.txt").string(), (dir / "t.txt").string(),
                             25, 1);
  CHECK(al.phase_labels.size() == 4);
  CHECK(al.frame_indices == std::vector<int>{0, 25, 50, 75});
  CHECK(al.dropped == 0);

  // identity subsampling
  {
    std::ofstream p(dir / "p1.txt");
    p << "Frame\tPhase\n0\tPreparation\n1\tPreparation\n2\tClippingCutting\n";
    std::ofstream t(dir / "t1.txt");
    t << "Frame";
    for (auto* n : kToolNames) t << '\t' << n;
    t << "\n0\t0\t0\t0\t0\t0\t0\t0\n1\t1\t1\t1\t1\t1\t1\t1\n2\t0\t1\t0\t1\t0\t1\t0\n";
  }
  auto al1 = load_annotations((dir / "p1.txt").string(),
                              (dir / "t1.txt").string(), 1, 1);
  CHECK(al1.phase_labels == std::vector<int>{0, 0, 2});
  CHECK(al1.dropped == 0);

  // missing tool row for index 25 drops that frame
  {
    std::ofstream t(dir / "t2.txt");
    t << "Frame";
    for (auto* n : kToolNames) t << '\t' << n;
    t << '\n';
    for (int f = 0; f < 100; f += 25)
      if (f != 25) t << f << "\t1\t0\t0\t0\t1\t0\t0\n";
  }
  auto al2 = load_annotations((dir / "p.txt").string(),
                              (dir / "t2.txt").string(), 25, 1);
  CHECK(al2.phase_labels.size() == 3);
  CHECK(al2.dropped == 1);

  // unknown phase name includes the line number
  {
    std::ofstream p(dir / "pbad.txt");
    p << "Frame\tPhase\n0\tPreparation\n1\tNoSuchPhase\n";
  }
  try {
    load_annotations((dir / "pbad.txt").string(), (dir / "t1.txt").string(), 1,
                     1);
    FAIL("expected ParseError");
  } catch (const ParseError& e) {
    CHECK(std::string(e.what()).find(":3") != std::string::npos);
  }

  // malformed binary column
  {
    std::ofstream t(dir / "tbad.txt");
    t << "Frame";
    for (auto* n : kToolNames) t << '\t' << n;
    t << "\n0\t0\t0\t2\t0\t0\t0\t0\n";
  }
  CHECK_THROWS_AS(load_annotations((dir / "p1.txt").string(),
                                   (dir / "tbad.txt").string(), 1, 1),
                  ParseError);
  fs::remove_all(dir);
}

TEST_CASE("make_clips: enumeration matches a brute-force window scan") {
  WorkflowSpec spec = WorkflowSpec::defaults();
  spec.duration_range.assign(7, {5, 5});
  VideoRecord v = generate_video(spec, "v", 1);  // length 35
  REQUIRE(v.length == 35);

  auto clips = make_clips(v, 10, 5);
  std::vector<int> starts;
  for (const auto& c : clips) starts.push_back(c.start_frames[0]);
  CHECK(starts == std::vector<int>{0, 5, 10, 15, 20, 25});

  // brute-force oracle over several (len, stride) pairs
  for (int clip_len : {1, 4, 10}) {
    for (int stride : {1, 3, clip_len}) {
      std::vector<int> want;
      for (int s = 0; s + clip_len <= v.length; s += stride) want.push_back(s);
      CHECK(clip_starts(v.length, clip_len, stride) == want);
    }
  }

  // stride == clip_len partitions floor(len/clip_len) windows
  CHECK(clip_starts(35, 7, 7).size() == 5);
  // one clip per frame when clip_len == 1
  CHECK(clip_starts(35, 1, 1).size() == 35);
  // clip longer than the video -> empty
  CHECK(clip_starts(35, 40, 1).empty());
  CHECK(make_clips(v, 40, 1).empty());

  // labels travel with the window
  const auto& c3 = clips[3];
  for (int t = 0; t < 10; ++t)
    CHECK(c3.phase_labels[t] == v.phase_labels[15 + t]);
}

TEST_CASE("augment: determinism, identity crop, involution, clip consistency") {
  WorkflowSpec spec = WorkflowSpec::defaults();
  spec.noise_level = 0.0;
  VideoRecord v = generate_video(spec, "v", 5);

  auto a = augment_frame(v.frame(0), v.channels, v.height, v.width, 28, 9);
  auto b = augment_frame(v.frame(0), v.channels, v.height, v.width, 28, 9);
  CHECK(a == b);

  // crop_size == frame_size: only mirroring can vary
  AugmentParams no_mirror{0, 0, false};
  std::vector<double> out(v.frame_stride());
  apply_augment(v.frame(0), v.channels, v.height, v.width, no_mirror,
                v.width, out.data());
  CHECK(std::equal(out.begin(), out.end(), v.frame(0)));

  // mirroring twice restores the frame
  AugmentParams mirror{0, 0, true};
  std::vector<double> m1(out.size()), m2(out.size());
  apply_augment(v.frame(0), v.channels, v.height, v.width, mirror, v.width,
                m1.data());
  apply_augment(m1.data(), v.channels, v.height, v.width, mirror, v.width,
                m2.data());
  CHECK(std::equal(m2.begin(), m2.end(), v.frame(0)));

  // the same params applied across a clip keep frames aligned
  Rng rng(31);
  AugmentParams shared = sample_augment(v.width, 24, rng);
  std::vector<double> f0(static_cast<int64_t>(v.channels) * 24 * 24),
      f1(f0.size());
  apply_augment(v.frame(0), v.channels, v.height, v.width, shared, 24,
                f0.data());
  apply_augment(v.frame(1), v.channels, v.height, v.width, shared, 24,
                f1.data());
  // same crop offsets: the static background pattern stays put
  // (verified indirectly: offsets are shared by construction here)
  CHECK(f0.size() == f1.size());

  Rng r2(33);
  CHECK_THROWS_AS(sample_augment(16, 24, r2), ConfigError);
}

TEST_SUITE_END();
