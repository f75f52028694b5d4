#include "mtrc/synth.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <sstream>

namespace fs = std::filesystem;

namespace mtrc {

const std::array<const char*, 7> kPhaseNames = {
    "Preparation",          "CalotTriangleDissection", "ClippingCutting",
    "GallbladderDissection", "GallbladderPackaging",    "CleaningCoagulation",
    "GallbladderRetraction"};

const std::array<const char*, 7> kToolNames = {
    "Grasper", "Bipolar", "Hook", "Scissors", "Clipper", "Irrigator",
    "SpecimenBag"};

namespace {

constexpr double kBgColors[7][3] = {
    {0.85, 0.35, 0.35}, {0.35, 0.75, 0.35}, {0.35, 0.45, 0.85},
    {0.80, 0.75, 0.30}, {0.75, 0.35, 0.75}, {0.30, 0.75, 0.75},
    {0.60, 0.60, 0.60}};

constexpr double kToolColors[7][3] = {
    {1.00, 1.00, 1.00}, {0.05, 0.05, 0.95}, {0.95, 0.05, 0.05},
    {0.05, 0.90, 0.05}, {0.95, 0.55, 0.05}, {0.60, 0.10, 0.90},
    {0.92, 0.92, 0.10}};

double clamp01(double v) { return v < 0.0 ? 0.0 : (v > 1.0 ? 1.0 : v); }

double luminance(const double* rgb) {
  return 0.299 * rgb[0] + 0.587 * rgb[1] + 0.114 * rgb[2];
}

}  // namespace

WorkflowSpec WorkflowSpec::defaults() {
  WorkflowSpec s;
  s.duration_range.assign(7, {10, 20});
  // qualitative Cholec80-like structure: grasper broadly present, hook
  // dominant in dissection, clipper/scissors in clipping-and-cutting,
  // irrigator/bipolar in cleaning, specimen bag in packaging/retraction
  s.tool_given_phase = {
      {0.50, 0.55, 0.50, 0.60, 0.85, 0.50, 0.80},  // Grasper
      {0.02, 0.10, 0.05, 0.15, 0.05, 0.60, 0.02},  // Bipolar
      {0.05, 0.85, 0.10, 0.80, 0.02, 0.05, 0.02},  // Hook
      {0.01, 0.02, 0.55, 0.02, 0.01, 0.02, 0.01},  // Scissors
      {0.01, 0.05, 0.70, 0.02, 0.01, 0.01, 0.01},  // Clipper
      {0.02, 0.05, 0.05, 0.15, 0.05, 0.70, 0.02},  // Irrigator
      {0.01, 0.01, 0.01, 0.02, 0.80, 0.05, 0.60},  // SpecimenBag
  };
  s.background_styles = {0, 1, 2, 3, 4, 5, 6};
  return s;
}

void WorkflowSpec::validate() const {
  if (num_phases <= 0 || num_tools <= 0)
    throw ConfigError("WorkflowSpec: phases/tools must be positive");
  if (frame_size < 8) throw ConfigError("WorkflowSpec: frame_size too small");
  if (channels != 1 && channels != 3)
    throw ConfigError("WorkflowSpec: channels must be 1 or 3");
  if (static_cast<int>(duration_range.size()) != num_phases)
    throw ConfigError("WorkflowSpec: duration_range size mismatch");
  for (const auto& d : duration_range)
    if (d[0] < 1 || d[1] < d[0])
      throw ConfigError("WorkflowSpec: durations must satisfy 1 <= min <= max");
  if (static_cast<int>(tool_given_phase.size()) != num_tools)
    throw ConfigError("WorkflowSpec: tool_given_phase rows mismatch");
  for (const auto& row : tool_given_phase) {
    if (static_cast<int>(row.size()) != num_phases)
      throw ConfigError("WorkflowSpec: tool_given_phase cols mismatch");
    for (double p : row)
      if (p < 0.0 || p > 1.0)
        throw ConfigError("WorkflowSpec: probabilities must lie in [0,1]");
  }
  if (tool_persistence < 1.0)
    throw ConfigError("WorkflowSpec: tool_persistence must be >= 1");
  if (noise_level < 0.0 || illumination_jitter < 0.0)
    throw ConfigError("WorkflowSpec: noise levels must be nonnegative");
  if (static_cast<int>(background_styles.size()) != num_phases)
    throw ConfigError("WorkflowSpec: background_styles size mismatch");
  if (train_ratio <= 0.0 || train_ratio >= 1.0)
    throw ConfigError("WorkflowSpec: train_ratio must lie in (0,1)");
}

nlohmann::json workflow_spec_to_json(const WorkflowSpec& s) {
  nlohmann::json dur = nlohmann::json::array();
  for (const auto& d : s.duration_range) dur.push_back({d[0], d[1]});
  return nlohmann::json{{"num_phases", s.num_phases},
                        {"num_tools", s.num_tools},
                        {"frame_size", s.frame_size},
                        {"channels", s.channels},
                        {"duration_range", dur},
                        {"tool_given_phase", s.tool_given_phase},
                        {"tool_persistence", s.tool_persistence},
                        {"noise_level", s.noise_level},
                        {"illumination_jitter", s.illumination_jitter},
                        {"background_styles", s.background_styles},
                        {"train_ratio", s.train_ratio}};
}

WorkflowSpec workflow_spec_from_json(const nlohmann::json& j) {
  WorkflowSpec s = WorkflowSpec::defaults();
  s.num_phases = j.value("num_phases", s.num_phases);
  s.num_tools = j.value("num_tools", s.num_tools);
  s.frame_size = j.value("frame_size", s.frame_size);
  s.channels = j.value("channels", s.channels);
  if (j.contains("duration_range")) {
    s.duration_range.clear();
    for (const auto& d : j.at("duration_range"))
      s.duration_range.push_back({d.at(0).get<int>(), d.at(1).get<int>()});
  }
  if (j.contains("tool_given_phase"))
    s.tool_given_phase =
        j.at("tool_given_phase").get<std::vector<std::vector<double>>>();
  s.tool_persistence = j.value("tool_persistence", s.tool_persistence);
  s.noise_level = j.value("noise_level", s.noise_level);
  s.illumination_jitter = j.value("illumination_jitter", s.illumination_jitter);
  if (j.contains("background_styles"))
    s.background_styles = j.at("background_styles").get<std::vector<int>>();
  s.train_ratio = j.value("train_ratio", s.train_ratio);
  s.validate();
  return s;
}

std::vector<int> generate_workflow(const WorkflowSpec& spec, uint64_t seed) {
  spec.validate();
  Rng rng(splitmix64(seed ^ 0x70686173657365ULL));
  std::vector<int> phases;
  for (int z = 0; z < spec.num_phases; ++z) {
    const int dur =
        rng.uniform_int(spec.duration_range[z][0], spec.duration_range[z][1]);
    phases.insert(phases.end(), dur, z);
  }
  return phases;
}

std::vector<uint8_t> sample_tools(const std::vector<int>& phase_seq,
                                  const WorkflowSpec& spec, uint64_t seed) {
  spec.validate();
  const int len = static_cast<int>(phase_seq.size());
  std::vector<uint8_t> tools(static_cast<size_t>(len) * spec.num_tools, 0);
  Rng base(splitmix64(seed ^ 0x746f6f6c73ULL));
  for (int c = 0; c < spec.num_tools; ++c) {
    Rng rng = base.fork(static_cast<uint64_t>(c));
    bool state = false;
    for (int t = 0; t < len; ++t) {
      const int z = phase_seq[t];
      if (z < 0 || z >= spec.num_phases)
        throw ConfigError("sample_tools: phase label out of range");
      const double pi = spec.tool_given_phase[c][z];
      if (t == 0 || phase_seq[t - 1] != z) {
        state = rng.bernoulli(pi);  // stationary re-draw at phase entry
      } else if (pi >= 1.0) {
        state = true;
      } else if (pi <= 0.0) {
        state = false;
      } else {
        double p_exit = 1.0 / spec.tool_persistence;
        double p_enter = pi * p_exit / (1.0 - pi);
        if (p_enter > 1.0) {  // keep stationarity exact at high presence
          p_enter = 1.0;
          p_exit = (1.0 - pi) / pi;
        }
        state = state ? !rng.bernoulli(p_exit) : rng.bernoulli(p_enter);
      }
      tools[static_cast<size_t>(t) * spec.num_tools + c] = state ? 1 : 0;
    }
  }
  return tools;
}

namespace {

void stamp_glyph(double* out, int channels, int size, int tool, int x0, int y0,
                 int side, int frame_size) {
  (void)size;
  const double* rgb = kToolColors[tool % 7];
  const double lum = luminance(rgb);
  auto put = [&](int y, int x) {
    if (y < 0 || y >= frame_size || x < 0 || x >= frame_size) return;
    if (channels == 1) {
      out[static_cast<int64_t>(y) * frame_size + x] = lum;
    } else {
      for (int c = 0; c < 3; ++c)
        out[(static_cast<int64_t>(c) * frame_size + y) * frame_size + x] =
            rgb[c];
    }
  };
  const int half = side / 2;
  switch (tool % 7) {
    case 0:  // filled square
      for (int y = 0; y < side; ++y)
        for (int x = 0; x < side; ++x) put(y0 + y, x0 + x);
      break;
    case 1:  // hollow square
      for (int k = 0; k < side; ++k) {
        put(y0, x0 + k);
        put(y0 + side - 1, x0 + k);
        put(y0 + k, x0);
        put(y0 + k, x0 + side - 1);
      }
      break;
    case 2:  // diagonal cross
      for (int k = 0; k < side; ++k) {
        put(y0 + k, x0 + k);
        put(y0 + k, x0 + side - 1 - k);
      }
      break;
    case 3:  // horizontal bar
      for (int y = half - 1; y <= half; ++y)
        for (int x = 0; x < side; ++x) put(y0 + y, x0 + x);
      break;
    case 4:  // vertical bar
      for (int y = 0; y < side; ++y)
        for (int x = half - 1; x <= half; ++x) put(y0 + y, x0 + x);
      break;
    case 5:  // diamond
      for (int y = 0; y < side; ++y)
        for (int x = 0; x < side; ++x)
          if (std::abs(y - half) + std::abs(x - half) <= half)
            put(y0 + y, x0 + x);
      break;
    default:  // plus
      for (int k = 0; k < side; ++k) {
        put(y0 + half, x0 + k);
        put(y0 + k, x0 + half);
      }
      break;
  }
}

}  // namespace

void render_frame(int phase, const uint8_t* tools, const WorkflowSpec& spec,
                  uint64_t seed, double* out) {
  if (phase < 0 || phase >= spec.num_phases)
    throw ConfigError("render_frame: phase out of range");
  const int n = spec.frame_size;
  Rng rng(splitmix64(seed ^ 0x6672616d65ULL));
  const double illum =
      1.0 + spec.illumination_jitter * (2.0 * rng.uniform() - 1.0);

  const int style = spec.background_styles[phase] % 7;
  const double* base = kBgColors[style];
  const double base_lum = luminance(base);
  const double freq = 1.0 + style;
  const double angle = style * 0.4487989505128276;  // pi/7
  const double ca = std::cos(angle), sa = std::sin(angle);
  for (int y = 0; y < n; ++y) {
    for (int x = 0; x < n; ++x) {
      const double wave =
          std::sin(6.283185307179586 * freq * (x * ca + y * sa) / n);
      const double shade = (0.75 + 0.25 * wave) * illum;
      if (spec.channels == 1) {
        out[static_cast<int64_t>(y) * n + x] = clamp01(base_lum * shade);
      } else {
        for (int c = 0; c < 3; ++c)
          out[(static_cast<int64_t>(c) * n + y) * n + x] =
              clamp01(base[c] * shade);
      }
    }
  }

  const int side = std::max(4, n / 4);
  for (int c = 0; c < spec.num_tools; ++c) {
    if (!tools[c]) continue;
    const int x0 = rng.uniform_int(1, n - side - 1);
    const int y0 = rng.uniform_int(1, n - side - 1);
    stamp_glyph(out, spec.channels, n, c, x0, y0, side, n);
  }

  if (spec.noise_level > 0.0) {
    const int64_t total = static_cast<int64_t>(spec.channels) * n * n;
    for (int64_t i = 0; i < total; ++i)
      out[i] = clamp01(out[i] + spec.noise_level * rng.normal());
  }
}

VideoRecord generate_video(const WorkflowSpec& spec, const std::string& id,
                           uint64_t seed) {
  VideoRecord v;
  v.video_id = id;
  v.channels = spec.channels;
  v.height = spec.frame_size;
  v.width = spec.frame_size;
  v.phase_labels = generate_workflow(spec, seed);
  v.length = static_cast<int>(v.phase_labels.size());
  v.tool_labels = sample_tools(v.phase_labels, spec, splitmix64(seed + 1));
  v.frames.resize(static_cast<int64_t>(v.length) * v.frame_stride());
  Rng frames_rng(splitmix64(seed + 2));
  for (int t = 0; t < v.length; ++t)
    render_frame(v.phase_labels[t],
                 v.tool_labels.data() + static_cast<size_t>(t) * spec.num_tools,
                 spec, frames_rng.next_u64(),
                 v.frames.data() + t * v.frame_stride());
  return v;
}

// --- on-disk formats ------------------------------------------------------

static_assert(std::endian::native == std::endian::little,
              "frame container I/O assumes a little-endian host");

void write_frame_container(const std::string& path, const VideoRecord& video) {
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw IoError("cannot open for writing: " + path);
  os.write("VFRM", 4);
  const uint32_t header[5] = {1u, static_cast<uint32_t>(video.length),
                              static_cast<uint32_t>(video.channels),
                              static_cast<uint32_t>(video.height),
                              static_cast<uint32_t>(video.width)};
  os.write(reinterpret_cast<const char*>(header), sizeof(header));
  std::vector<float> buf(video.frames.size());
  for (size_t i = 0; i < buf.size(); ++i)
    buf[i] = static_cast<float>(video.frames[i]);
  os.write(reinterpret_cast<const char*>(buf.data()),
           static_cast<std::streamsize>(sizeof(float) * buf.size()));
  if (!os) throw IoError("write failed: " + path);
}

VideoRecord read_frame_container(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw IoError("cannot open: " + path);
  char magic[4];
  is.read(magic, 4);
  if (!is || std::memcmp(magic, "VFRM", 4) != 0)
    throw IoError("not a frame container: " + path);
  uint32_t header[5];
  is.read(reinterpret_cast<char*>(header), sizeof(header));
  if (!is || header[0] != 1)
    throw IoError("unsupported frame container: " + path);
  VideoRecord v;
  v.length = static_cast<int>(header[1]);
  v.channels = static_cast<int>(header[2]);
  v.height = static_cast<int>(header[3]);
  v.width = static_cast<int>(header[4]);
  std::vector<float> buf(static_cast<size_t>(v.length) * v.channels * v.height *
                         v.width);
  is.read(reinterpret_cast<char*>(buf.data()),
          static_cast<std::streamsize>(sizeof(float) * buf.size()));
  if (!is) throw IoError("truncated frame container: " + path);
  v.frames.assign(buf.begin(), buf.end());
  return v;
}

namespace {

std::string video_name(int index) {
  char buf[16];
  std::snprintf(buf, sizeof(buf), "video%02d", index + 1);
  return buf;
}

void write_text_file(const std::string& path, const std::string& content) {
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw IoError("cannot open for writing: " + path);
  os << content;
  if (!os) throw IoError("write failed: " + path);
}

}  // namespace

DatasetSplit generate_dataset(const WorkflowSpec& spec, int num_videos,
                              const std::string& out_dir, uint64_t seed,
                              int phase_fps) {
  spec.validate();
  if (num_videos < 2) throw ConfigError("generate_dataset: need >= 2 videos");
  if (phase_fps < 1) throw ConfigError("generate_dataset: phase_fps >= 1");
  std::error_code ec;
  fs::create_directories(out_dir, ec);
  if (ec) throw IoError("cannot create directory " + out_dir + ": " + ec.message());

  DatasetSplit split;
  nlohmann::json video_meta = nlohmann::json::array();
  const int num_train =
      std::max(1, std::min(num_videos - 1,
                           static_cast<int>(std::lround(num_videos * spec.train_ratio))));
  Rng rng(seed);
  for (int i = 0; i < num_videos; ++i) {
    const std::string id = video_name(i);
    VideoRecord v =
        generate_video(spec, id, splitmix64(seed ^ (0x9e3779b9ULL * (i + 1))));
    const std::string base = (fs::path(out_dir) / id).string();
    write_frame_container(base + ".frames", v);

    std::ostringstream phase_os;
    phase_os << "Frame\tPhase\n";
    for (int t = 0; t < v.length; ++t)
      for (int k = 0; k < phase_fps; ++k)
        phase_os << (t * phase_fps + k) << '\t'
                 << kPhaseNames[v.phase_labels[t] % 7] << '\n';
    write_text_file(base + "-phase.txt", phase_os.str());

    std::ostringstream tool_os;
    tool_os << "Frame";
    for (const char* name : kToolNames) tool_os << '\t' << name;
    tool_os << '\n';
    for (int t = 0; t < v.length; ++t) {
      tool_os << (t * phase_fps);
      for (int c = 0; c < spec.num_tools; ++c)
        tool_os << '\t'
                << int(v.tool_labels[static_cast<size_t>(t) * spec.num_tools + c]);
      tool_os << '\n';
    }
    write_text_file(base + "-tool.txt", tool_os.str());

    if (i < num_train)
      split.train_videos.push_back(id);
    else
      split.test_videos.push_back(id);
    video_meta.push_back({{"video_id", id}, {"length", v.length}});
  }

  nlohmann::json manifest{{"kind", "mtrc-dataset"},
                          {"seed", seed},
                          {"phase_fps", phase_fps},
                          {"workflow", workflow_spec_to_json(spec)},
                          {"videos", video_meta},
                          {"train_videos", split.train_videos},
                          {"test_videos", split.test_videos}};
  write_text_file((fs::path(out_dir) / "dataset.json").string(),
                  manifest.dump(2) + "\n");
  return split;
}

// --- ingestion -------------------------------------------------------------

namespace {

std::vector<std::string> split_tabs(const std::string& line) {
  std::vector<std::string> out;
  size_t start = 0;
  while (true) {
    const size_t pos = line.find('\t', start);
    if (pos == std::string::npos) {
      out.push_back(line.substr(start));
      break;
    }
    out.push_back(line.substr(start, pos - start));
    start = pos + 1;
  }
  if (!out.empty() && !out.back().empty() && out.back().back() == '\r')
    out.back().pop_back();
  return out;
}

}  // namespace

AlignedLabels load_annotations(const std::string& phase_file,
                               const std::string& tool_file, int fps_phase,
                               int fps_tool,
                               const std::map<std::string, int>* phase_names,
                               const std::vector<std::string>* tool_columns) {
  if (fps_phase < 1 || fps_tool < 1)
    throw ConfigError("load_annotations: fps values must be >= 1");

  std::map<std::string, int> names;
  if (phase_names) {
    names = *phase_names;
  } else {
    for (int z = 0; z < 7; ++z) names[kPhaseNames[z]] = z;
  }

  std::ifstream pis(phase_file);
  if (!pis) throw IoError("cannot open: " + phase_file);
  std::string line;
  if (!std::getline(pis, line))
    throw ParseError(phase_file + ": empty phase file");
  // header "Frame\tPhase"
  std::vector<std::pair<int, int>> phase_rows;  // (frame, phase id)
  int line_no = 1;
  while (std::getline(pis, line)) {
    ++line_no;
    if (line.empty()) continue;
    const auto cols = split_tabs(line);
    if (cols.size() != 2)
      throw ParseError(phase_file + ":" + std::to_string(line_no) +
                       ": expected 2 tab-separated columns");
    int frame;
    try {
      frame = std::stoi(cols[0]);
    } catch (...) {
      throw ParseError(phase_file + ":" + std::to_string(line_no) +
                       ": bad frame index '" + cols[0] + "'");
    }
    const auto it = names.find(cols[1]);
    if (it == names.end())
      throw ParseError(phase_file + ":" + std::to_string(line_no) +
                       ": unknown phase name '" + cols[1] + "'");
    phase_rows.emplace_back(frame, it->second);
  }

  std::ifstream tis(tool_file);
  if (!tis) throw IoError("cannot open: " + tool_file);
  if (!std::getline(tis, line))
    throw ParseError(tool_file + ": empty tool file");
  const auto header = split_tabs(line);
  if (header.size() < 2 || header[0] != "Frame")
    throw ParseError(tool_file + ":1: expected 'Frame' header column");
  std::vector<std::string> expected;
  if (tool_columns) {
    expected = *tool_columns;
  } else {
    expected.assign(kToolNames.begin(), kToolNames.end());
  }
  if (header.size() != expected.size() + 1)
    throw ParseError(tool_file + ":1: expected " +
                     std::to_string(expected.size()) + " tool columns");
  for (size_t i = 0; i < expected.size(); ++i)
    if (header[i + 1] != expected[i])
      throw ParseError(tool_file + ":1: column '" + header[i + 1] +
                       "' does not match expected '" + expected[i] + "'");
  const int num_tools = static_cast<int>(expected.size());

  std::map<int, std::vector<uint8_t>> tool_rows;
  line_no = 1;
  while (std::getline(tis, line)) {
    ++line_no;
    if (line.empty()) continue;
    const auto cols = split_tabs(line);
    if (static_cast<int>(cols.size()) != num_tools + 1)
      throw ParseError(tool_file + ":" + std::to_string(line_no) +
                       ": expected " + std::to_string(num_tools + 1) +
                       " columns");
    int frame;
    try {
      frame = std::stoi(cols[0]);
    } catch (...) {
      throw ParseError(tool_file + ":" + std::to_string(line_no) +
                       ": bad frame index '" + cols[0] + "'");
    }
    std::vector<uint8_t> bits(num_tools);
    for (int c = 0; c < num_tools; ++c) {
      if (cols[c + 1] == "0")
        bits[c] = 0;
      else if (cols[c + 1] == "1")
        bits[c] = 1;
      else
        throw ParseError(tool_file + ":" + std::to_string(line_no) +
                         ": binary column expected, got '" + cols[c + 1] + "'");
    }
    tool_rows[frame] = std::move(bits);
  }

  AlignedLabels out;
  for (const auto& [frame, phase] : phase_rows) {
    if (frame % fps_phase != 0) continue;  // subsample to 1 fps
    const auto it = tool_rows.find(frame);
    if (it == tool_rows.end()) {
      ++out.dropped;
      continue;
    }
    out.frame_indices.push_back(frame);
    out.phase_labels.push_back(phase);
    out.tool_labels.insert(out.tool_labels.end(), it->second.begin(),
                           it->second.end());
  }
  return out;
}

const VideoRecord& LoadedDataset::video(const std::string& id) const {
  for (const auto& v : videos)
    if (v.video_id == id) return v;
  throw IoError("dataset has no video '" + id + "'");
}

LoadedDataset load_dataset(const std::string& dir) {
  const std::string manifest_path = (fs::path(dir) / "dataset.json").string();
  std::ifstream is(manifest_path);
  if (!is) throw IoError("cannot open: " + manifest_path);
  nlohmann::json j;
  try {
    is >> j;
  } catch (const std::exception& e) {
    throw ParseError(manifest_path + ": " + e.what());
  }
  if (j.value("kind", "") != "mtrc-dataset")
    throw ParseError(manifest_path + ": not a dataset manifest");

  LoadedDataset ds;
  ds.spec = workflow_spec_from_json(j.at("workflow"));
  ds.split.train_videos = j.at("train_videos").get<std::vector<std::string>>();
  ds.split.test_videos = j.at("test_videos").get<std::vector<std::string>>();
  const int phase_fps = j.value("phase_fps", 1);

  std::vector<std::string> ids;
  for (const auto& vm : j.at("videos"))
    ids.push_back(vm.at("video_id").get<std::string>());
  std::sort(ids.begin(), ids.end());

  for (const auto& id : ids) {
    const std::string base = (fs::path(dir) / id).string();
    VideoRecord v = read_frame_container(base + ".frames");
    v.video_id = id;
    AlignedLabels labels = load_annotations(base + "-phase.txt",
                                            base + "-tool.txt", phase_fps, 1);
    if (static_cast<int>(labels.phase_labels.size()) != v.length)
      throw AlignmentError(id + ": annotation rows (" +
                           std::to_string(labels.phase_labels.size()) +
                           ") do not match frame count (" +
                           std::to_string(v.length) + ")");
    v.phase_labels = std::move(labels.phase_labels);
    v.tool_labels = std::move(labels.tool_labels);
    ds.videos.push_back(std::move(v));
  }
  return ds;
}

// --- clips and augmentation -------------------------------------------------

std::vector<int> clip_starts(int video_length, int clip_len, int stride) {
  if (clip_len < 1 || stride < 1)
    throw ConfigError("clip_starts: clip_len and stride must be >= 1");
  std::vector<int> starts;
  for (int s = 0; s + clip_len <= video_length; s += stride) starts.push_back(s);
  return starts;
}

std::vector<ClipBatch> make_clips(const VideoRecord& video, int clip_len,
                                  int stride) {
  const int num_tools =
      video.length > 0
          ? static_cast<int>(video.tool_labels.size()) / video.length
          : 0;
  std::vector<ClipBatch> clips;
  for (int start : clip_starts(video.length, clip_len, stride)) {
    ClipBatch c;
    c.batch = 1;
    c.n_f = clip_len;
    c.channels = video.channels;
    c.height = video.height;
    c.width = video.width;
    c.frames.assign(video.frames.begin() + start * video.frame_stride(),
                    video.frames.begin() + (start + clip_len) * video.frame_stride());
    c.tool_labels.assign(
        video.tool_labels.begin() + static_cast<size_t>(start) * num_tools,
        video.tool_labels.begin() +
            static_cast<size_t>(start + clip_len) * num_tools);
    c.phase_labels.assign(video.phase_labels.begin() + start,
                          video.phase_labels.begin() + start + clip_len);
    c.video_ids.push_back(video.video_id);
    c.start_frames.push_back(start);
    clips.push_back(std::move(c));
  }
  return clips;
}

AugmentParams sample_augment(int frame_size, int crop_size, Rng& rng) {
  if (crop_size > frame_size)
    throw ConfigError("augment: crop size exceeds frame size");
  AugmentParams p;
  const int slack = frame_size - crop_size;
  p.dx = slack > 0 ? rng.uniform_int(0, slack) : 0;
  p.dy = slack > 0 ? rng.uniform_int(0, slack) : 0;
  p.mirror = rng.bernoulli(0.5);
  return p;
}

void apply_augment(const double* src, int channels, int height, int width,
                   const AugmentParams& params, int crop_size, double* dst) {
  if (crop_size > height || crop_size > width)
    throw ConfigError("augment: crop size exceeds frame size");
  for (int c = 0; c < channels; ++c) {
    const double* sc = src + static_cast<int64_t>(c) * height * width;
    double* dc = dst + static_cast<int64_t>(c) * crop_size * crop_size;
    for (int y = 0; y < crop_size; ++y) {
      const double* row = sc + static_cast<int64_t>(y + params.dy) * width;
      for (int x = 0; x < crop_size; ++x) {
        const int sx = params.mirror ? params.dx + crop_size - 1 - x
                                     : params.dx + x;
        dc[static_cast<int64_t>(y) * crop_size + x] = row[sx];
      }
    }
  }
}

void center_crop(const double* src, int channels, int height, int width,
                 int crop_size, double* dst) {
  AugmentParams p;
  p.dx = (width - crop_size) / 2;
  p.dy = (height - crop_size) / 2;
  p.mirror = false;
  apply_augment(src, channels, height, width, p, crop_size, dst);
}

std::vector<double> augment_frame(const double* src, int channels, int height,
                                  int width, int crop_size, uint64_t seed) {
  Rng rng(seed);
  const AugmentParams p = sample_augment(std::min(height, width), crop_size, rng);
  std::vector<double> out(static_cast<int64_t>(channels) * crop_size *
                          crop_size);
  apply_augment(src, channels, height, width, p, crop_size, out.data());
  return out;
}

}  // namespace mtrc
