#pragma once

// Dataset variants, the SVW1 sequence file format, splits, flips and clip sampling.

#include <atomic>
#include <bit>
#include <charconv>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <mutex>
#include <optional>
#include <span>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include "svw/core/config.hpp"
#include "svw/core/error.hpp"
#include "svw/core/io.hpp"
#include "svw/core/random.hpp"
#include "svw/render.hpp"
#include "svw/solver.hpp"

namespace svw {

namespace fs = std::filesystem;

enum class AzimuthMode { fixed, random };

struct DatasetSpec {
  std::string name = "main";
  InitKind init_kind = InitKind::droplet;
  double depth_m = 10.0;
  double tank_min_m = 10.0;
  double tank_max_m = 20.0;
  AzimuthMode azimuth_mode = AzimuthMode::fixed;
  double azimuth_deg = 45.0;
  int n_sequences = 300;
  std::uint64_t seed = 1;

  // Simulation and rendering settings shared by every sequence.
  int grid_n = 64;
  int n_frames = 100;
  double dt_out = 0.01;
  double kin_viscosity = 1e-6;
  bool viscous = true;
  InitShape shape;
  double altitude_deg = 20.0;
  double exaggeration = 50.0;
  int frame_size = 32;

  void validate() const {
    if (name.empty() || name.find('/') != std::string::npos) throw UsageError("invalid dataset name '" + name + "'");
    if (!(tank_min_m > 0) || tank_min_m > tank_max_m) throw UsageError("tank range must satisfy 0 < lo <= hi");
    if (n_sequences < 1) throw UsageError("n_sequences must be >= 1");
    if (frame_size < 1 || frame_size > grid_n) throw UsageError("frame_size must be in [1, grid_n]");
    sim_params(tank_min_m).validate();
    render_params(azimuth_mode == AzimuthMode::fixed ? azimuth_deg : 0.0).validate();
  }

  SimParams sim_params(double tank) const {
    SimParams p;
    p.tank_size_m = tank;
    p.depth_m = depth_m;
    p.grid_n = grid_n;
    p.n_frames = n_frames;
    p.dt_out = dt_out;
    p.kin_viscosity = kin_viscosity;
    p.viscous = viscous;
    return p;
  }

  RenderParams render_params(double azimuth) const {
    RenderParams r;
    r.azimuth_deg = azimuth;
    r.altitude_deg = altitude_deg;
    r.exaggeration = exaggeration;
    r.native_n = grid_n;
    r.out_n = frame_size;
    return r;
  }

  /// Dataset variants: main, double_drop, lines, opposite_illum, random_illum,
  /// shallow_depth, small_tank, big_tank, fixed_tank.
  static DatasetSpec preset(const std::string& variant) {
    DatasetSpec s;
    s.name = variant;
    if (variant == "main") {
      s.n_sequences = 300;
      return s;
    }
    s.n_sequences = 60;
    if (variant == "double_drop") {
      s.init_kind = InitKind::double_droplet;
    } else if (variant == "lines") {
      s.init_kind = InitKind::line;
    } else if (variant == "opposite_illum") {
      s.azimuth_deg = 135.0;
    } else if (variant == "random_illum") {
      s.azimuth_mode = AzimuthMode::random;
    } else if (variant == "shallow_depth") {
      s.depth_m = 5.0;
    } else if (variant == "small_tank") {
      s.tank_min_m = 5.0;
      s.tank_max_m = 10.0;
    } else if (variant == "big_tank") {
      s.tank_min_m = 20.0;
      s.tank_max_m = 40.0;
    } else if (variant == "fixed_tank") {
      s.tank_min_m = s.tank_max_m = 15.0;
      s.n_sequences = 300;
    } else {
      throw UsageError("unknown dataset preset '" + variant + "'");
    }
    return s;
  }

  static std::vector<std::string> preset_names() {
    return {"main",          "double_drop", "lines",    "opposite_illum", "random_illum",
            "shallow_depth", "small_tank",  "big_tank", "fixed_tank"};
  }

  /// Reads a spec; an optional `preset` key selects the base variant.
  static DatasetSpec from_config(const KeyValueConfig& c) {
    DatasetSpec s = c.has("preset") ? preset(c.get("preset", "main")) : DatasetSpec{};
    s.name = c.get("name", s.name);
    if (c.has("init_kind")) s.init_kind = parse_init_kind(c.get("init_kind", ""));
    s.depth_m = c.get_double("depth_m", s.depth_m);
    s.tank_min_m = c.get_double("tank_min_m", s.tank_min_m);
    s.tank_max_m = c.get_double("tank_max_m", s.tank_max_m);
    if (c.has("azimuth")) {
      const auto az = c.get("azimuth", "");
      if (az == "random") {
        s.azimuth_mode = AzimuthMode::random;
      } else {
        s.azimuth_mode = AzimuthMode::fixed;
        s.azimuth_deg = KeyValueConfig::to_double("azimuth", az);
      }
    }
    s.n_sequences = static_cast<int>(c.get_int("n_sequences", s.n_sequences));
    s.seed = static_cast<std::uint64_t>(c.get_int("seed", static_cast<long long>(s.seed)));
    s.grid_n = static_cast<int>(c.get_int("grid_n", s.grid_n));
    s.n_frames = static_cast<int>(c.get_int("n_frames", s.n_frames));
    s.dt_out = c.get_double("dt_out", s.dt_out);
    s.kin_viscosity = c.get_double("kin_viscosity", s.kin_viscosity);
    s.viscous = c.get_bool("viscous", s.viscous);
    s.shape.amplitude = c.get_double("amplitude", s.shape.amplitude);
    s.shape.width_fraction = c.get_double("width_fraction", s.shape.width_fraction);
    s.altitude_deg = c.get_double("altitude_deg", s.altitude_deg);
    s.exaggeration = c.get_double("exaggeration", s.exaggeration);
    s.frame_size = static_cast<int>(c.get_int("frame_size", s.frame_size));
    s.validate();
    return s;
  }

  KeyValueConfig to_config() const {
    KeyValueConfig c;
    auto num = [](double x) {
      char buf[64];
      std::snprintf(buf, sizeof(buf), "%.17g", x);
      return std::string(buf);
    };
    c.set("name", name);
    c.set("init_kind", to_string(init_kind));
    c.set("depth_m", num(depth_m));
    c.set("tank_min_m", num(tank_min_m));
    c.set("tank_max_m", num(tank_max_m));
    c.set("azimuth", azimuth_mode == AzimuthMode::random ? "random" : num(azimuth_deg));
    c.set("n_sequences", std::to_string(n_sequences));
    c.set("seed", std::to_string(seed));
    c.set("grid_n", std::to_string(grid_n));
    c.set("n_frames", std::to_string(n_frames));
    c.set("dt_out", num(dt_out));
    c.set("kin_viscosity", num(kin_viscosity));
    c.set("viscous", viscous ? "true" : "false");
    c.set("amplitude", num(shape.amplitude));
    c.set("width_fraction", num(shape.width_fraction));
    c.set("altitude_deg", num(altitude_deg));
    c.set("exaggeration", num(exaggeration));
    c.set("frame_size", std::to_string(frame_size));
    return c;
  }
};

struct SequenceMeta {
  std::uint32_t n_frames = 0;
  std::uint32_t frame_size = 0;
  double tank_size_m = 0.0;
  double depth_m = 0.0;
  double azimuth_deg = 0.0;
  double dt_out = 0.0;
  InitKind init_kind = InitKind::droplet;
  std::uint64_t seed = 0;
  bool normalized = false;

  bool operator==(const SequenceMeta&) const = default;
};

/// One episode: n_frames frames of frame_size x frame_size, frame-major, row-major.
struct SequenceRecord {
  SequenceMeta meta;
  std::vector<float> frames;

  std::size_t frame_pixels() const { return static_cast<std::size_t>(meta.frame_size) * meta.frame_size; }
  int n_frames() const { return static_cast<int>(meta.n_frames); }

  std::span<const float> frame(int i) const {
    return {frames.data() + static_cast<std::size_t>(i) * frame_pixels(), frame_pixels()};
  }
  std::span<float> frame(int i) {
    return {frames.data() + static_cast<std::size_t>(i) * frame_pixels(), frame_pixels()};
  }

  void check() const {
    if (frames.size() != static_cast<std::size_t>(meta.n_frames) * frame_pixels()) {
      throw DataError("sequence frame data does not match header");
    }
  }
};

// ---------------------------------------------------------------------------
// SVW1 binary format (little-endian):
//   "SVW1" u32 version=1, u32 n_frames, u32 frame_size,
//   f64 tank_size_m, f64 depth_m, f64 azimuth_deg, f64 dt_out,
//   u32 init_kind, u64 seed, u8 normalized, f32 frames...
// ---------------------------------------------------------------------------

inline std::string encode_record(const SequenceRecord& rec) {
  rec.check();
  std::string out;
  out.reserve(64 + rec.frames.size() * 4);
  out += "SVW1";
  io::put_le<std::uint32_t>(out, 1);
  io::put_le<std::uint32_t>(out, rec.meta.n_frames);
  io::put_le<std::uint32_t>(out, rec.meta.frame_size);
  io::put_f64(out, rec.meta.tank_size_m);
  io::put_f64(out, rec.meta.depth_m);
  io::put_f64(out, rec.meta.azimuth_deg);
  io::put_f64(out, rec.meta.dt_out);
  io::put_le<std::uint32_t>(out, static_cast<std::uint32_t>(rec.meta.init_kind));
  io::put_le<std::uint64_t>(out, rec.meta.seed);
  out.push_back(rec.meta.normalized ? 1 : 0);
  for (float x : rec.frames) io::put_f32(out, x);
  return out;
}

inline SequenceRecord decode_record(const std::string& bytes, const std::string& origin = "<record>") {
  io::Reader in(bytes, origin);
  if (in.raw(4) != "SVW1") throw DataError(origin + ": bad magic");
  const auto version = in.get<std::uint32_t>();
  if (version != 1) throw DataError(origin + ": unsupported version " + std::to_string(version));
  SequenceRecord rec;
  rec.meta.n_frames = in.get<std::uint32_t>();
  rec.meta.frame_size = in.get<std::uint32_t>();
  rec.meta.tank_size_m = in.f64();
  rec.meta.depth_m = in.f64();
  rec.meta.azimuth_deg = in.f64();
  rec.meta.dt_out = in.f64();
  rec.meta.init_kind = init_kind_from_code(in.get<std::uint32_t>());
  rec.meta.seed = in.get<std::uint64_t>();
  const auto flag = in.get<std::uint8_t>();
  if (flag > 1) throw DataError(origin + ": bad normalized flag");
  rec.meta.normalized = flag == 1;
  const std::size_t count = static_cast<std::size_t>(rec.meta.n_frames) * rec.frame_pixels();
  if (in.remaining() != count * 4) throw DataError(origin + ": frame payload does not match header");
  rec.frames.resize(count);
  for (float& x : rec.frames) x = in.f32();
  return rec;
}

inline void write_record(const fs::path& path, const SequenceRecord& rec) {
  io::write_file_atomic(path, encode_record(rec));
}

inline SequenceRecord read_record(const fs::path& path) {
  return decode_record(io::read_file(path), path.string());
}

inline std::string sequence_filename(int id) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "seq_%06d.svw", id);
  return buf;
}

/// Simulates, renders and resamples sequence `index` of a dataset.
inline SequenceRecord generate_sequence(const DatasetSpec& spec, int index) {
  const std::uint64_t seed = child_seed(spec.seed, static_cast<std::uint64_t>(index));
  Rng rng(seed);
  const double tank = rng.uniform(spec.tank_min_m, spec.tank_max_m);
  const double azimuth = spec.azimuth_mode == AzimuthMode::random ? rng.uniform(0.0, 360.0) : spec.azimuth_deg;
  const SimParams sim = spec.sim_params(tank);
  const RenderParams rp = spec.render_params(azimuth);

  SequenceRecord rec;
  rec.meta.n_frames = static_cast<std::uint32_t>(spec.n_frames);
  rec.meta.frame_size = static_cast<std::uint32_t>(spec.frame_size);
  rec.meta.tank_size_m = tank;
  rec.meta.depth_m = spec.depth_m;
  rec.meta.azimuth_deg = azimuth;
  rec.meta.dt_out = spec.dt_out;
  rec.meta.init_kind = spec.init_kind;
  rec.meta.seed = seed;
  rec.frames.reserve(static_cast<std::size_t>(spec.n_frames) * spec.frame_size * spec.frame_size);

  auto initial = make_initial(spec.init_kind, sim, rng, spec.shape).first;
  simulate(std::move(initial), sim, [&](int, const SimState& s) {
    const auto img = render_frame(s.h, sim.dx(), rp);
    for (double x : img.values()) rec.frames.push_back(static_cast<float>(x));
  });
  return rec;
}

// ---------------------------------------------------------------------------
// Splits
// ---------------------------------------------------------------------------

struct SplitIndex {
  std::vector<int> train, val, test;

  bool operator==(const SplitIndex&) const = default;

  std::string to_text() const {
    std::ostringstream out;
    for (const auto* part : {&train, &val, &test}) {
      for (std::size_t i = 0; i < part->size(); ++i) out << (i ? " " : "") << (*part)[i];
      out << "\n";
    }
    return out.str();
  }

  static SplitIndex from_text(const std::string& text, const std::string& origin = "split.txt") {
    std::istringstream in(text);
    SplitIndex s;
    std::string line;
    for (auto* part : {&s.train, &s.val, &s.test}) {
      if (!std::getline(in, line)) throw DataError(origin + ": expected three lines");
      std::istringstream ls(line);
      int id;
      while (ls >> id) part->push_back(id);
      if (!ls.eof()) throw DataError(origin + ": malformed id list");
    }
    return s;
  }
};

/// 70/15/15 split of the given ids after a seeded shuffle.
/// Rounding: train = round(0.7 n), val = floor(0.15 n), test = the remainder.
inline SplitIndex split(std::vector<int> ids, std::uint64_t seed) {
  Rng rng(mix_seed(seed ^ 0x5EED5EEDULL));
  std::sort(ids.begin(), ids.end());
  rng.shuffle(ids);
  const std::size_t n = ids.size();
  const std::size_t n_train = (70 * n + 50) / 100;
  const std::size_t n_val = (15 * n) / 100;
  SplitIndex s;
  s.train.assign(ids.begin(), ids.begin() + n_train);
  s.val.assign(ids.begin() + n_train, ids.begin() + n_train + n_val);
  s.test.assign(ids.begin() + n_train + n_val, ids.end());
  for (auto* part : {&s.train, &s.val, &s.test}) std::sort(part->begin(), part->end());
  return s;
}

inline SplitIndex split(int n_sequences, std::uint64_t seed) {
  std::vector<int> ids(n_sequences);
  for (int i = 0; i < n_sequences; ++i) ids[i] = i;
  return split(std::move(ids), seed);
}

// ---------------------------------------------------------------------------
// Augmentation and clip sampling
// ---------------------------------------------------------------------------

enum class FlipMode { none = 0, h = 1, v = 2, hv = 3 };

/// Applies the same flip to every frame. `h` mirrors columns, `v` mirrors rows.
inline SequenceRecord augment_flip(const SequenceRecord& rec, FlipMode mode) {
  if (mode == FlipMode::none) return rec;
  SequenceRecord out = rec;
  const int n = static_cast<int>(rec.meta.frame_size);
  const bool fh = mode == FlipMode::h || mode == FlipMode::hv;
  const bool fv = mode == FlipMode::v || mode == FlipMode::hv;
  for (int f = 0; f < rec.n_frames(); ++f) {
    auto src = rec.frame(f);
    auto dst = out.frame(f);
    for (int r = 0; r < n; ++r)
      for (int c = 0; c < n; ++c) {
        const int sr = fv ? n - 1 - r : r, sc = fh ? n - 1 - c : c;
        dst[static_cast<std::size_t>(r) * n + c] = src[static_cast<std::size_t>(sr) * n + sc];
      }
  }
  return out;
}

/// Copies frames [start, start + count) of `rec` into `dst` with the flip applied;
/// equivalent to slicing augment_flip(rec, mode).
template <class T>
void copy_clip(const SequenceRecord& rec, int start, int count, FlipMode mode, T* dst) {
  if (start < 0 || count < 0 || start + count > rec.n_frames()) throw DataError("clip outside the sequence");
  const int n = static_cast<int>(rec.meta.frame_size);
  const bool fh = mode == FlipMode::h || mode == FlipMode::hv;
  const bool fv = mode == FlipMode::v || mode == FlipMode::hv;
  for (int f = 0; f < count; ++f) {
    auto src = rec.frame(start + f);
    T* out = dst + static_cast<std::size_t>(f) * n * n;
    for (int r = 0; r < n; ++r)
      for (int c = 0; c < n; ++c) {
        const int sr = fv ? n - 1 - r : r, sc = fh ? n - 1 - c : c;
        out[static_cast<std::size_t>(r) * n + c] = static_cast<T>(src[static_cast<std::size_t>(sr) * n + sc]);
      }
  }
}

/// K clip start indices, uniform in [0, n_frames - N - M].
inline std::vector<int> sample_subsequences(const SequenceRecord& rec, int n_in, int n_out, int k, Rng& rng) {
  const int len = n_in + n_out;
  if (len > rec.n_frames()) {
    throw DataError("clip length " + std::to_string(len) + " exceeds sequence length " +
                    std::to_string(rec.n_frames()));
  }
  std::vector<int> starts(static_cast<std::size_t>(std::max(k, 0)));
  const auto span = static_cast<std::uint64_t>(rec.n_frames() - len + 1);
  for (int& s : starts) s = static_cast<int>(rng.below(span));
  return starts;
}

// ---------------------------------------------------------------------------
// Generation and loading
// ---------------------------------------------------------------------------

struct GenerateReport {
  fs::path directory;
  std::vector<int> written;
  std::vector<std::pair<int, std::string>> skipped;
  NormStats norm;
  SplitIndex split;
};

/// Generates `<out_root>/<spec.name>/` with one file per sequence plus
/// norm.txt (training split statistics), split.txt and spec.cfg.
/// Diverged sequences are logged and skipped.
inline GenerateReport generate(const DatasetSpec& spec, const fs::path& out_root, int jobs = 1,
                               std::ostream* log = &std::cerr) {
  spec.validate();
  GenerateReport report;
  report.directory = out_root / spec.name;
  fs::create_directories(report.directory);

  std::vector<std::optional<std::string>> failures(spec.n_sequences);
  std::atomic<int> next{0};
  auto worker = [&] {
    for (int i = next++; i < spec.n_sequences; i = next++) {
      try {
        write_record(report.directory / sequence_filename(i), generate_sequence(spec, i));
      } catch (const DivergenceError& e) {
        failures[i] = e.what();
      }
    }
  };
  std::vector<std::thread> pool;
  for (int j = 1; j < std::max(jobs, 1); ++j) pool.emplace_back(worker);
  worker();
  for (auto& t : pool) t.join();

  for (int i = 0; i < spec.n_sequences; ++i) {
    if (failures[i]) {
      report.skipped.push_back({i, *failures[i]});
      if (log) *log << "gen-dataset: skipped sequence " << i << ": " << *failures[i] << "\n";
    } else {
      report.written.push_back(i);
    }
  }
  if (report.written.empty()) throw NumericError("every sequence diverged");

  report.split = split(report.written, spec.seed);
  if (report.split.train.empty()) report.split.train = report.written;
  std::vector<float> pixels;
  for (int id : report.split.train) {
    const auto rec = read_record(report.directory / sequence_filename(id));
    pixels.insert(pixels.end(), rec.frames.begin(), rec.frames.end());
  }
  report.norm = NormStats::fit<float>(pixels);
  io::write_file_atomic(report.directory / "norm.txt", report.norm.to_text());
  io::write_file_atomic(report.directory / "split.txt", report.split.to_text());
  io::write_file_atomic(report.directory / "spec.cfg", spec.to_config().to_string());
  return report;
}

/// A dataset directory loaded into memory.
struct Dataset {
  fs::path directory;
  std::string name;
  std::map<int, SequenceRecord> records;  // raw frames in [0,1]
  NormStats norm;
  SplitIndex split;

  const SequenceRecord& at(int id) const {
    auto it = records.find(id);
    if (it == records.end()) throw DataError(name + ": no sequence " + std::to_string(id));
    return it->second;
  }

  std::vector<int> ids() const {
    std::vector<int> out;
    for (const auto& [id, _] : records) out.push_back(id);
    return out;
  }

  /// Sequences of one split ("train", "val", "test") or "all", normalized with `stats`.
  std::vector<SequenceRecord> normalized(const std::string& part, const NormStats& stats) const {
    std::vector<int> sel;
    if (part == "train") sel = split.train;
    else if (part == "val") sel = split.val;
    else if (part == "test") sel = split.test;
    else if (part == "all") sel = ids();
    else throw UsageError("unknown split '" + part + "'");
    std::vector<SequenceRecord> out;
    out.reserve(sel.size());
    for (int id : sel) out.push_back(normalize(at(id), stats));
    return out;
  }

  static SequenceRecord normalize(const SequenceRecord& raw, const NormStats& stats) {
    if (raw.meta.normalized) throw DataError("sequence is already normalized");
    SequenceRecord out = raw;
    stats.apply_inplace<float>(out.frames);
    out.meta.normalized = true;
    return out;
  }
};

inline Dataset load_dataset(const fs::path& dir) {
  if (!fs::is_directory(dir)) throw DataError("dataset directory not found: " + dir.string());
  Dataset ds;
  ds.directory = dir;
  ds.name = dir.filename().string();
  if (ds.name.empty()) ds.name = dir.parent_path().filename().string();
  for (const auto& entry : fs::directory_iterator(dir)) {
    const auto fname = entry.path().filename().string();
    if (fname.size() != 14 || !fname.starts_with("seq_") || !fname.ends_with(".svw")) continue;
    int id = -1;
    auto [ptr, ec] = std::from_chars(fname.data() + 4, fname.data() + 10, id);
    if (ec == std::errc() && ptr == fname.data() + 10) ds.records.emplace(id, read_record(entry.path()));
  }
  if (ds.records.empty()) throw DataError(dir.string() + ": no sequence files");
  ds.norm = NormStats::load((dir / "norm.txt").string());
  ds.split = SplitIndex::from_text(io::read_file(dir / "split.txt"), (dir / "split.txt").string());
  const auto& first = ds.records.begin()->second.meta;
  for (const auto& [id, rec] : ds.records) {
    if (rec.meta.frame_size != first.frame_size || rec.meta.n_frames != first.n_frames) {
      throw DataError(dir.string() + ": inconsistent frame geometry in sequence " + std::to_string(id));
    }
  }
  return ds;
}

}  // namespace svw
