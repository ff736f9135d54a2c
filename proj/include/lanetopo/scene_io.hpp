#pragma once

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstdint>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <optional>
#include <sstream>
#include <string>
#include <string_view>
#include <variant>
#include <vector>

#include <json.hpp>

#include "lanetopo/core.hpp"
#include "lanetopo/geometry.hpp"
#include "lanetopo/heads.hpp"
#include "lanetopo/metrics.hpp"
#include "lanetopo/sgnn.hpp"
#include "lanetopo/synth.hpp"

namespace lanetopo {

using Json = nlohmann::json;

/// Location inside a JSON document, e.g. /adj_lt/1.
class JsonPath {
 public:
  using Step = std::variant<std::string, std::size_t>;

  JsonPath() = default;

  JsonPath operator/(std::string key) const {
    JsonPath p = *this;
    p.steps_.emplace_back(std::move(key));
    return p;
  }
  JsonPath operator/(std::size_t index) const {
    JsonPath p = *this;
    p.steps_.emplace_back(index);
    return p;
  }

  const std::vector<Step>& steps() const noexcept { return steps_; }

  std::string str() const {
    if (steps_.empty()) return "/";
    std::string s;
    for (const auto& step : steps_) {
      s += '/';
      if (const auto* k = std::get_if<std::string>(&step)) s += *k;
      else s += std::to_string(std::get<std::size_t>(step));
    }
    return s;
  }

 private:
  std::vector<Step> steps_;
};

/// Malformed or invalid input document. `offset` is the byte offset of the
/// offending value (or of the syntax error), when known.
class ParseError : public InvalidInput {
 public:
  ParseError(std::string path, std::optional<std::size_t> offset, const std::string& message)
      : InvalidInput(format(path, offset, message)),
        path_(std::move(path)),
        offset_(offset),
        message_(message) {}

  const std::string& path() const noexcept { return path_; }
  /// The message without path and offset.
  const std::string& message() const noexcept { return message_; }
  std::optional<std::size_t> offset() const noexcept { return offset_; }

 private:
  static std::string format(const std::string& path, std::optional<std::size_t> offset,
                            const std::string& message) {
    std::string s = path + ": " + message;
    if (offset) s += " (byte " + std::to_string(*offset) + ")";
    return s;
  }

  std::string path_;
  std::optional<std::size_t> offset_;
  std::string message_;
};

namespace detail {

/// Minimal scanner over raw JSON text, used only to turn a path into a byte
/// offset after the document already parsed.
class JsonLocator {
 public:
  explicit JsonLocator(std::string_view text) : text_(text) {}

  std::optional<std::size_t> find(const JsonPath& path) {
    pos_ = 0;
    try {
      ws();
      for (const auto& step : path.steps()) {
        if (const auto* key = std::get_if<std::string>(&step)) {
          if (!enter_member(*key)) return std::nullopt;
        } else if (!enter_element(std::get<std::size_t>(step))) {
          return std::nullopt;
        }
      }
      return pos_;
    } catch (const std::out_of_range&) {
      return std::nullopt;
    }
  }

 private:
  char peek() const { return text_.at(pos_); }
  void ws() {
    while (pos_ < text_.size() && std::string_view(" \t\r\n").find(text_[pos_]) != std::string_view::npos)
      ++pos_;
  }

  std::string string_token() {
    std::string out;
    ++pos_;  // opening quote
    while (peek() != '"') {
      if (peek() == '\\') {
        out += text_.at(pos_ + 1);
        pos_ += 2;
      } else {
        out += text_[pos_++];
      }
    }
    ++pos_;
    return out;
  }

  void skip_value() {
    ws();
    const char c = peek();
    if (c == '"') {
      string_token();
    } else if (c == '{' || c == '[') {
      int depth = 0;
      do {
        const char d = peek();
        if (d == '"') {
          string_token();
          continue;
        }
        if (d == '{' || d == '[') ++depth;
        if (d == '}' || d == ']') --depth;
        ++pos_;
      } while (depth > 0);
    } else {
      while (pos_ < text_.size() && std::string_view(",]} \t\r\n").find(text_[pos_]) == std::string_view::npos)
        ++pos_;
    }
    ws();
  }

  bool enter_member(const std::string& key) {
    if (peek() != '{') return false;
    ++pos_;
    ws();
    while (peek() != '}') {
      const std::string k = string_token();
      ws();
      ++pos_;  // colon
      ws();
      if (k == key) return true;
      skip_value();
      if (peek() == ',') ++pos_;
      ws();
    }
    return false;
  }

  bool enter_element(std::size_t index) {
    if (peek() != '[') return false;
    ++pos_;
    ws();
    for (std::size_t i = 0; peek() != ']'; ++i) {
      if (i == index) return true;
      skip_value();
      if (peek() == ',') ++pos_;
      ws();
    }
    return false;
  }

  std::string_view text_;
  std::size_t pos_ = 0;
};

/// Typed access to a parsed document; every failure names its path and
/// byte offset.
class JsonReader {
 public:
  explicit JsonReader(std::string_view text) : text_(text) {}

  [[noreturn]] void fail(const JsonPath& path, const std::string& message) const {
    throw ParseError(path.str(), JsonLocator(text_).find(path), message);
  }

  const Json& at(const Json& obj, const JsonPath& path, const std::string& key) const {
    if (!obj.is_object()) fail(path, "expected an object");
    auto it = obj.find(key);
    if (it == obj.end()) fail(path, "missing key '" + key + "'");
    return *it;
  }

  const Json& array(const Json& v, const JsonPath& path) const {
    if (!v.is_array()) fail(path, "expected an array");
    return v;
  }

  const Json& array(const Json& v, const JsonPath& path, std::size_t size) const {
    array(v, path);
    if (v.size() != size)
      fail(path, "expected " + std::to_string(size) + " entries, got " + std::to_string(v.size()));
    return v;
  }

  double number(const Json& v, const JsonPath& path) const {
    if (!v.is_number()) fail(path, "expected a number");
    const double d = v.get<double>();
    if (!std::isfinite(d)) fail(path, "non-finite number");
    return d;
  }

  std::int64_t integer(const Json& v, const JsonPath& path) const {
    if (!v.is_number_integer()) fail(path, "expected an integer");
    return v.get<std::int64_t>();
  }

  std::string string(const Json& v, const JsonPath& path) const {
    if (!v.is_string()) fail(path, "expected a string");
    return v.get<std::string>();
  }

  bool boolean(const Json& v, const JsonPath& path) const {
    if (!v.is_boolean()) fail(path, "expected true or false");
    return v.get<bool>();
  }

  void only_keys(const Json& obj, const JsonPath& path,
                 std::initializer_list<std::string_view> allowed) const {
    if (!obj.is_object()) fail(path, "expected an object");
    for (const auto& [k, v] : obj.items())
      if (std::find(allowed.begin(), allowed.end(), k) == allowed.end())
        fail(path / k, "unknown key '" + k + "'");
  }

  /// Rows x cols matrix from nested arrays; `rows` fixed, `cols` fixed.
  DenseMatrix matrix(const Json& v, const JsonPath& path, std::size_t rows, std::size_t cols) const {
    array(v, path, rows);
    DenseMatrix m(rows, cols);
    for (std::size_t r = 0; r < rows; ++r) {
      const JsonPath rp = path / r;
      array(v[r], rp, cols);
      for (std::size_t c = 0; c < cols; ++c) m(r, c) = number(v[r][c], rp / c);
    }
    return m;
  }

 private:
  std::string_view text_;
};

/// Offset of the first number literal that overflows a double.
inline std::optional<std::size_t> overflowing_number(std::string_view text) {
  for (std::size_t i = 0; i < text.size(); ++i) {
    const char c = text[i];
    if (c == '"') {
      for (++i; i < text.size() && text[i] != '"'; ++i)
        if (text[i] == '\\') ++i;
    } else if (c == '-' || (c >= '0' && c <= '9')) {
      const std::string token(text.substr(i, text.find_first_of(",]} \t\r\n", i) - i));
      if (!std::isfinite(std::strtod(token.c_str(), nullptr))) return i;
      i += token.size() - 1;
    }
  }
  return std::nullopt;
}

inline Json parse_json(std::string_view text) {
  try {
    return Json::parse(text);
  } catch (const Json::parse_error& e) {
    throw ParseError("/", e.byte > 0 ? e.byte - 1 : 0, "malformed JSON");
  } catch (const Json::out_of_range&) {
    throw ParseError("/", overflowing_number(text), "non-finite number");
  }
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Scene files.

struct SceneOptions {
  /// Resample every lane to 11 points by arc length on load.
  bool resample = false;
  /// Validate as ground truth (adjacency must be 0/1, lanes inside BEV).
  bool ground_truth = true;
  EvalConfig config{};
};

struct LoadedScene {
  FrameGraph frame;
  std::vector<Violation> violations;
};

inline LoadedScene parse_scene(std::string_view text, const SceneOptions& options = {}) {
  const Json doc = detail::parse_json(text);
  const detail::JsonReader rd(text);
  const JsonPath root;
  rd.only_keys(doc, root,
               {"frame_id", "lanes", "lane_confidences", "traffic_elements", "adj_ll", "adj_lt",
                "image_size"});
  LoadedScene out;
  FrameGraph& f = out.frame;
  f.frame_id = rd.string(rd.at(doc, root, "frame_id"), root / "frame_id");

  const JsonPath lp = root / "lanes";
  const Json& lanes = rd.array(rd.at(doc, root, "lanes"), lp);
  for (std::size_t i = 0; i < lanes.size(); ++i) {
    Centerline l;
    const JsonPath ip = lp / i;
    rd.array(lanes[i], ip);
    for (std::size_t k = 0; k < lanes[i].size(); ++k) {
      const JsonPath kp = ip / k;
      const Json& pt = rd.array(lanes[i][k], kp, 3);
      l.points.push_back({rd.number(pt[0], kp / 0), rd.number(pt[1], kp / 1),
                          rd.number(pt[2], kp / 2)});
    }
    f.lanes.push_back(std::move(l));
  }
  if (doc.contains("lane_confidences")) {
    const JsonPath cp = root / "lane_confidences";
    const Json& conf = rd.array(doc["lane_confidences"], cp, f.lanes.size());
    for (std::size_t i = 0; i < conf.size(); ++i) f.lanes[i].confidence = rd.number(conf[i], cp / i);
  }

  const JsonPath tp = root / "traffic_elements";
  const Json& tes = rd.array(rd.at(doc, root, "traffic_elements"), tp);
  for (std::size_t k = 0; k < tes.size(); ++k) {
    const JsonPath ep = tp / k;
    rd.only_keys(tes[k], ep, {"box", "attribute", "scores"});
    const Json& b = rd.array(rd.at(tes[k], ep, "box"), ep / "box", 4);
    TrafficElement te;
    te.box = {rd.number(b[0], ep / "box" / 0), rd.number(b[1], ep / "box" / 1),
              rd.number(b[2], ep / "box" / 2), rd.number(b[3], ep / "box" / 3)};
    const std::int64_t a = rd.integer(rd.at(tes[k], ep, "attribute"), ep / "attribute");
    if (a < 0 || a >= static_cast<std::int64_t>(kNumAttributes))
      rd.fail(ep / "attribute", "attribute must be in 0..12");
    te.attribute = static_cast<Attribute>(a);
    te.class_scores = one_hot(te.attribute);
    if (tes[k].contains("scores")) {
      const JsonPath sp = ep / "scores";
      const Json& s = rd.array(tes[k]["scores"], sp, kNumAttributes);
      for (std::size_t c = 0; c < kNumAttributes; ++c) te.class_scores[c] = rd.number(s[c], sp / c);
    }
    f.tes.push_back(te);
  }

  const std::size_t n_l = f.lanes.size(), n_t = f.tes.size();
  f.adj_ll = rd.matrix(rd.at(doc, root, "adj_ll"), root / "adj_ll", n_l, n_l);
  f.adj_lt = rd.matrix(rd.at(doc, root, "adj_lt"), root / "adj_lt", n_l, n_t);
  if (doc.contains("image_size")) {
    const JsonPath ip = root / "image_size";
    const Json& s = rd.array(doc["image_size"], ip, 2);
    f.image_size = std::array<double, 2>{rd.number(s[0], ip / 0), rd.number(s[1], ip / 1)};
    if (!((*f.image_size)[0] > 0.0 && (*f.image_size)[1] > 0.0))
      rd.fail(ip, "image size must be positive");
  }

  if (options.resample)
    for (auto& l : f.lanes)
      if (l.points.size() >= 2) l = resample(l, kLanePoints);
  out.violations = validate_frame(f, options.config, options.ground_truth);
  return out;
}

inline Json scene_to_json(const FrameGraph& f) {
  Json doc = Json::object();
  doc["frame_id"] = f.frame_id;
  Json lanes = Json::array();
  bool all_confident = true;
  for (const auto& l : f.lanes) {
    Json pts = Json::array();
    for (const auto& p : l.points) pts.push_back({p.x, p.y, p.z});
    lanes.push_back(std::move(pts));
    all_confident = all_confident && l.confidence == 1.0;
  }
  doc["lanes"] = std::move(lanes);
  if (!all_confident) {
    Json c = Json::array();
    for (const auto& l : f.lanes) c.push_back(l.confidence);
    doc["lane_confidences"] = std::move(c);
  }
  Json tes = Json::array();
  for (const auto& te : f.tes) {
    Json e = {{"box", {te.box.x1, te.box.y1, te.box.x2, te.box.y2}},
              {"attribute", static_cast<int>(te.attribute)}};
    if (te.class_scores != one_hot(te.attribute)) e["scores"] = te.class_scores;
    tes.push_back(std::move(e));
  }
  doc["traffic_elements"] = std::move(tes);
  auto matrix = [](const DenseMatrix& m) {
    Json rows = Json::array();
    for (std::size_t r = 0; r < m.rows(); ++r) {
      Json row = Json::array();
      for (double v : m.row(r)) row.push_back(v);
      rows.push_back(std::move(row));
    }
    return rows;
  };
  doc["adj_ll"] = matrix(f.adj_ll);
  doc["adj_lt"] = matrix(f.adj_lt);
  if (f.image_size) doc["image_size"] = *f.image_size;
  return doc;
}

/// Canonical text: sorted keys, two-space indent, shortest round-trip
/// floats, trailing newline.
inline std::string dump_json(const Json& j) { return j.dump(2) + "\n"; }

inline std::string serialize_scene(const FrameGraph& f) { return dump_json(scene_to_json(f)); }

inline std::string read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw InvalidInput("cannot open " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

inline void write_file(const std::filesystem::path& path, std::string_view text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw InvalidInput("cannot write " + path.string());
  out.write(text.data(), static_cast<std::streamsize>(text.size()));
  if (!out) throw InvalidInput("write failed: " + path.string());
}

/// Violation tied to a file.
struct FileViolation {
  std::string file;
  Violation violation;
};

struct LoadedScenes {
  std::vector<FrameGraph> frames;
  std::vector<FileViolation> violations;
};

/// Loads every *.json in `dir`, in file-name order. Parse errors are
/// rethrown with the file name prefixed.
inline LoadedScenes load_scene_dir(const std::filesystem::path& dir, const SceneOptions& options = {}) {
  if (!std::filesystem::is_directory(dir)) throw InvalidInput("not a directory: " + dir.string());
  std::vector<std::filesystem::path> files;
  for (const auto& e : std::filesystem::directory_iterator(dir))
    if (e.is_regular_file() && e.path().extension() == ".json") files.push_back(e.path());
  std::sort(files.begin(), files.end());
  LoadedScenes out;
  for (const auto& p : files) {
    try {
      auto s = parse_scene(read_file(p), options);
      for (auto& v : s.violations) out.violations.push_back({p.filename().string(), std::move(v)});
      out.frames.push_back(std::move(s.frame));
    } catch (const ParseError& e) {
      throw ParseError(p.filename().string() + ":" + e.path(), e.offset(), e.message());
    }
  }
  return out;
}

inline void write_scene_dir(const std::filesystem::path& dir, std::span<const FrameGraph> frames) {
  std::filesystem::create_directories(dir);
  for (const auto& f : frames) write_file(dir / (f.frame_id + ".json"), serialize_scene(f));
}

// ---------------------------------------------------------------------------
// Reports.

inline Json report_to_json(const EvalReport& r) {
  auto per_threshold = [](const std::vector<ThresholdScore>& v) {
    Json a = Json::array();
    for (const auto& t : v) a.push_back({{"threshold", t.threshold}, {"score", t.score}});
    return a;
  };
  Json j;
  j["det_l"] = r.det_l;
  j["det_l_chamfer"] = r.det_l_chamfer;
  j["det_t"] = r.det_t;
  j["top_ll"] = r.top_ll;
  j["top_lt"] = r.top_lt;
  j["ols"] = r.ols;
  j["det_l_per_threshold"] = per_threshold(r.det_l_per_threshold);
  j["det_l_chamfer_per_threshold"] = per_threshold(r.det_l_chamfer_per_threshold);
  j["top_ll_per_threshold"] = per_threshold(r.top_ll_per_threshold);
  j["top_lt_per_threshold"] = per_threshold(r.top_lt_per_threshold);
  j["det_t_per_attribute"] = r.det_t_per_attribute;
  j["counts"] = {{"frames", r.num_frames},
                 {"gt_lanes", r.num_gt_lanes},
                 {"pred_lanes", r.num_pred_lanes},
                 {"gt_traffic_elements", r.num_gt_tes},
                 {"pred_traffic_elements", r.num_pred_tes},
                 {"top_ll_vertices", r.top_ll_vertices},
                 {"top_ll_excluded", r.top_ll_excluded},
                 {"top_lt_vertices", r.top_lt_vertices},
                 {"top_lt_excluded", r.top_lt_excluded}};
  j["notes"] = r.notes;
  return j;
}

/// Report for the whole set, plus one per frame (sorted by frame_id) when
/// `per_frame` is set.
inline Json evaluation_document(std::span<const FrameGraph> gt, std::span<const FrameGraph> pred,
                                const EvalConfig& config, bool per_frame) {
  Json doc = report_to_json(evaluate(gt, pred, config));
  if (per_frame) {
    std::map<std::string, const FrameGraph*> by_id;
    for (const auto& p : pred) by_id[p.frame_id] = &p;
    std::vector<const FrameGraph*> gts;
    for (const auto& g : gt) gts.push_back(&g);
    std::sort(gts.begin(), gts.end(),
              [](const FrameGraph* a, const FrameGraph* b) { return a->frame_id < b->frame_id; });
    std::vector<Json> frames(gts.size());
    EvalConfig single = config;
    single.threads = 1;
    detail::parallel_for(gts.size(), config.threads, [&](std::size_t i) {
      const FrameGraph& p = *by_id.at(gts[i]->frame_id);
      Json fj = report_to_json(evaluate(std::span(gts[i], 1), std::span(&p, 1), single));
      fj["frame_id"] = gts[i]->frame_id;
      frames[i] = std::move(fj);
    });
    doc["frames"] = frames;
  }
  return doc;
}

// ---------------------------------------------------------------------------
// Run configuration (JSON).

struct SgnnRunConfig {
  SgnnVariant variant = SgnnVariant::kKnowledgeGraph;
  Activation activation = Activation::kRelu;
  std::size_t layers = 6;
  double beta_ll = 0.5;
  double beta_lt = 0.5;
  bool adapter_bias = true;
};

struct RunConfig {
  EvalConfig eval{};
  SgnnRunConfig sgnn{};
  SynthSpec synth{};
  std::uint64_t seed = 0;
  std::size_t threads = 1;
};

inline std::string_view variant_name(SgnnVariant v) {
  return v == SgnnVariant::kSceneGraph ? "sg" : "skg";
}

inline SgnnVariant parse_variant(std::string_view s) {
  if (s == "sg") return SgnnVariant::kSceneGraph;
  if (s == "skg") return SgnnVariant::kKnowledgeGraph;
  throw InvalidInput("unknown SGNN variant '" + std::string(s) + "' (expected sg or skg)");
}

namespace detail {

inline std::vector<double> number_list(const JsonReader& rd, const Json& v, const JsonPath& p) {
  rd.array(v, p);
  std::vector<double> out;
  for (std::size_t i = 0; i < v.size(); ++i) out.push_back(rd.number(v[i], p / i));
  return out;
}

inline std::size_t count(const JsonReader& rd, const Json& v, const JsonPath& p) {
  const std::int64_t n = rd.integer(v, p);
  if (n < 0) rd.fail(p, "must be non-negative");
  return static_cast<std::size_t>(n);
}

inline ConfidenceBand band(const JsonReader& rd, const Json& v, const JsonPath& p) {
  const Json& a = rd.array(v, p, 2);
  return {rd.number(a[0], p / 0), rd.number(a[1], p / 1)};
}

inline void read_synth(const JsonReader& rd, const Json& s, const JsonPath& sp, SynthSpec& spec) {
  rd.only_keys(s, sp,
               {"seed", "lanes_min", "lanes_max", "intersection_probability", "te_min", "te_max",
                "point_sigma", "lane_drop", "lane_add", "te_drop", "te_add",
                "attribute_corruption", "edge_flip", "tp_confidence", "fp_confidence"});
  for (const auto& [k, v] : s.items()) {
    const JsonPath p = sp / k;
    if (k == "seed") spec.seed = count(rd, v, p);
    else if (k == "lanes_min") spec.lanes_min = count(rd, v, p);
    else if (k == "lanes_max") spec.lanes_max = count(rd, v, p);
    else if (k == "intersection_probability") spec.intersection_probability = rd.number(v, p);
    else if (k == "te_min") spec.te_min = count(rd, v, p);
    else if (k == "te_max") spec.te_max = count(rd, v, p);
    else if (k == "point_sigma") spec.point_sigma = rd.number(v, p);
    else if (k == "lane_drop") spec.lane_drop = rd.number(v, p);
    else if (k == "lane_add") spec.lane_add = rd.number(v, p);
    else if (k == "te_drop") spec.te_drop = rd.number(v, p);
    else if (k == "te_add") spec.te_add = rd.number(v, p);
    else if (k == "attribute_corruption") spec.attribute_corruption = rd.number(v, p);
    else if (k == "edge_flip") spec.edge_flip = rd.number(v, p);
    else if (k == "tp_confidence") spec.tp_confidence = band(rd, v, p);
    else if (k == "fp_confidence") spec.fp_confidence = band(rd, v, p);
  }
  try {
    spec.validate();
  } catch (const InvalidInput& e) {
    rd.fail(sp, e.what());
  }
}

}  // namespace detail

/// Synth spec from a JSON object with the SynthSpec field names.
inline SynthSpec parse_synth_spec(std::string_view text, SynthSpec base = {}) {
  const Json doc = detail::parse_json(text);
  detail::read_synth(detail::JsonReader(text), doc, JsonPath(), base);
  return base;
}

/// Parses a run configuration. Unknown keys are errors; absent keys keep
/// their defaults.
inline RunConfig parse_run_config(std::string_view text) {
  const Json doc = detail::parse_json(text);
  const detail::JsonReader rd(text);
  const JsonPath root;
  rd.only_keys(doc, root, {"eval", "sgnn", "synth", "seed", "threads"});
  RunConfig c;
  if (doc.contains("seed")) c.seed = detail::count(rd, doc["seed"], root / "seed");
  if (doc.contains("threads")) {
    c.threads = detail::count(rd, doc["threads"], root / "threads");
    if (c.threads == 0) rd.fail(root / "threads", "must be at least 1");
  }
  if (doc.contains("eval")) {
    const JsonPath ep = root / "eval";
    const Json& e = doc["eval"];
    rd.only_keys(e, ep,
                 {"frechet_thresholds", "chamfer_thresholds", "te_iou_threshold",
                  "edge_confidence_threshold", "bev_range", "projection", "ap_interpolation"});
    for (const auto& [k, v] : e.items()) {
      const JsonPath p = ep / k;
      if (k == "frechet_thresholds") c.eval.frechet_thresholds = detail::number_list(rd, v, p);
      else if (k == "chamfer_thresholds") c.eval.chamfer_thresholds = detail::number_list(rd, v, p);
      else if (k == "te_iou_threshold") c.eval.te_iou_threshold = rd.number(v, p);
      else if (k == "edge_confidence_threshold") c.eval.edge_confidence_threshold = rd.number(v, p);
      else if (k == "projection") {
        const std::string s = rd.string(v, p);
        if (s == "hungarian") c.eval.projection = ProjectionMode::kHungarian;
        else if (s == "greedy") c.eval.projection = ProjectionMode::kGreedy;
        else rd.fail(p, "expected \"hungarian\" or \"greedy\"");
      } else if (k == "ap_interpolation") {
        const std::string s = rd.string(v, p);
        if (s == "all_point") c.eval.ap_interpolation = ApInterpolation::kAllPoint;
        else if (s == "eleven_point") c.eval.ap_interpolation = ApInterpolation::kElevenPoint;
        else rd.fail(p, "expected \"all_point\" or \"eleven_point\"");
      } else if (k == "bev_range") {
        rd.only_keys(v, p, {"x_min", "x_max", "y_min", "y_max", "z_min", "z_max"});
        auto& b = c.eval.bev_range;
        for (const auto& [bk, bv] : v.items()) {
          const double d = rd.number(bv, p / bk);
          if (bk == "x_min") b.x_min = d;
          else if (bk == "x_max") b.x_max = d;
          else if (bk == "y_min") b.y_min = d;
          else if (bk == "y_max") b.y_max = d;
          else if (bk == "z_min") b.z_min = d;
          else b.z_max = d;
        }
      }
    }
    try {
      c.eval.validate();
    } catch (const InvalidInput& ex) {
      rd.fail(ep, ex.what());
    }
  }
  if (doc.contains("sgnn")) {
    const JsonPath sp = root / "sgnn";
    const Json& s = doc["sgnn"];
    rd.only_keys(s, sp, {"variant", "activation", "layers", "beta_ll", "beta_lt", "adapter_bias"});
    for (const auto& [k, v] : s.items()) {
      const JsonPath p = sp / k;
      if (k == "variant") {
        const std::string name = rd.string(v, p);
        if (name != "sg" && name != "skg") rd.fail(p, "expected \"sg\" or \"skg\"");
        c.sgnn.variant = parse_variant(name);
      } else if (k == "activation") {
        const std::string name = rd.string(v, p);
        if (name == "relu") c.sgnn.activation = Activation::kRelu;
        else if (name == "identity") c.sgnn.activation = Activation::kIdentity;
        else rd.fail(p, "expected \"relu\" or \"identity\"");
      } else if (k == "layers") {
        c.sgnn.layers = detail::count(rd, v, p);
        if (c.sgnn.layers == 0) rd.fail(p, "must be at least 1");
      } else if (k == "adapter_bias") {
        c.sgnn.adapter_bias = rd.boolean(v, p);
      } else {
        const double beta = rd.number(v, p);
        if (!(beta >= 0.0 && beta <= 1.0)) rd.fail(p, "must be in [0,1]");
        (k == "beta_ll" ? c.sgnn.beta_ll : c.sgnn.beta_lt) = beta;
      }
    }
  }
  if (doc.contains("synth")) detail::read_synth(rd, doc["synth"], root / "synth", c.synth);
  c.eval.threads = c.threads;
  return c;
}

/// Thread count from LANETOPO_THREADS, if set to a positive integer.
inline std::optional<std::size_t> threads_from_env() {
  const char* v = std::getenv("LANETOPO_THREADS");
  if (!v || !*v) return std::nullopt;
  char* end = nullptr;
  const long n = std::strtol(v, &end, 10);
  if (*end != '\0' || n <= 0) throw InvalidInput("LANETOPO_THREADS must be a positive integer");
  return static_cast<std::size_t>(n);
}

// ---------------------------------------------------------------------------
// Parameter checkpoints: a JSON manifest of named float64 tensors, stored
// inline or in a little-endian sidecar blob.

struct Checkpoint {
  SgnnDims sgnn_dims{};
  bool adapter_bias = true;
  std::vector<SgnnParams> layers;
  std::optional<HeadParams> heads;

  static Checkpoint make(const SgnnDims& dims, std::size_t layers, std::uint64_t seed,
                         bool adapter_bias = true, bool with_heads = true) {
    Checkpoint c{dims, adapter_bias, {}, std::nullopt};
    for (std::size_t i = 0; i < layers; ++i)
      c.layers.push_back(SgnnParams::make(dims, mix64(seed + i), adapter_bias));
    if (with_heads)
      c.heads = HeadParams::make({dims.lane_dim, dims.te_dim, dims.lane_dim, dims.lane_dim / 2},
                                 mix64(seed ^ 0x4845'4144));
    return c;
  }

  template <typename Self, typename Fn>
  static void visit(Self& self, Fn&& fn) {
    for (std::size_t i = 0; i < self.layers.size(); ++i) {
      const std::string prefix = "sgnn." + std::to_string(i) + ".";
      SgnnParams::visit(self.layers[i],
                        [&](const std::string& name, auto& m) { fn(prefix + name, m); });
    }
    if (self.heads)
      HeadParams::visit(*self.heads, [&](const std::string& name, auto& m) { fn("heads." + name, m); });
  }
};

namespace detail {

inline void put_le(std::string& out, double v) {
  const auto bits = std::bit_cast<std::uint64_t>(v);
  for (int b = 0; b < 8; ++b) out.push_back(static_cast<char>((bits >> (8 * b)) & 0xff));
}

inline double get_le(std::string_view in, std::size_t at) {
  std::uint64_t bits = 0;
  for (int b = 0; b < 8; ++b)
    bits |= static_cast<std::uint64_t>(static_cast<unsigned char>(in[at + b])) << (8 * b);
  return std::bit_cast<double>(bits);
}

}  // namespace detail

/// Writes `manifest_path`; with `blob_path` the tensor data goes there and
/// the manifest records its file name relative to the manifest.
inline void save_checkpoint(const Checkpoint& c, const std::filesystem::path& manifest_path,
                            const std::optional<std::filesystem::path>& blob_path = std::nullopt) {
  Json m;
  m["format"] = "lanetopo.params";
  m["version"] = 1;
  m["sgnn"] = {{"lane_dim", c.sgnn_dims.lane_dim},
               {"te_dim", c.sgnn_dims.te_dim},
               {"embed_hidden", c.sgnn_dims.embed_hidden},
               {"layers", c.layers.size()},
               {"adapter_bias", c.adapter_bias},
               {"beta_ll", c.layers.empty() ? 0.5 : c.layers.front().beta_ll},
               {"beta_lt", c.layers.empty() ? 0.5 : c.layers.front().beta_lt},
               {"dropout", c.layers.empty() ? 0.1 : c.layers.front().dropout}};
  if (c.heads) {
    const auto& d = c.heads->dims;
    m["heads"] = {{"lane_dim", d.lane_dim}, {"te_dim", d.te_dim}, {"hidden", d.hidden},
                  {"topo_dim", d.topo_dim}};
  } else {
    m["heads"] = nullptr;
  }
  std::string blob;
  Json tensors = Json::array();
  Checkpoint::visit(c, [&](const std::string& name, const DenseMatrix& t) {
    Json e = {{"name", name}, {"shape", {t.rows(), t.cols()}}};
    if (blob_path) {
      e["offset"] = blob.size();
      for (double v : t.values()) detail::put_le(blob, v);
    } else {
      e["data"] = t.data();
    }
    tensors.push_back(std::move(e));
  });
  m["tensors"] = std::move(tensors);
  if (blob_path) {
    m["blob"] = blob_path->filename().string();
    write_file(*blob_path, blob);
  }
  write_file(manifest_path, dump_json(m));
}

inline Checkpoint load_checkpoint(const std::filesystem::path& manifest_path) {
  const std::string text = read_file(manifest_path);
  const Json doc = detail::parse_json(text);
  const detail::JsonReader rd(text);
  const JsonPath root;
  rd.only_keys(doc, root, {"format", "version", "sgnn", "heads", "tensors", "blob"});
  if (rd.string(rd.at(doc, root, "format"), root / "format") != "lanetopo.params")
    rd.fail(root / "format", "not a lanetopo parameter manifest");
  if (rd.integer(rd.at(doc, root, "version"), root / "version") != 1)
    rd.fail(root / "version", "unsupported version");

  const JsonPath sp = root / "sgnn";
  const Json& s = rd.at(doc, root, "sgnn");
  rd.only_keys(s, sp,
               {"lane_dim", "te_dim", "embed_hidden", "layers", "adapter_bias", "beta_ll", "beta_lt",
                "dropout"});
  Checkpoint c;
  c.sgnn_dims = {detail::count(rd, rd.at(s, sp, "lane_dim"), sp / "lane_dim"),
                 detail::count(rd, rd.at(s, sp, "te_dim"), sp / "te_dim"),
                 detail::count(rd, rd.at(s, sp, "embed_hidden"), sp / "embed_hidden")};
  c.adapter_bias = rd.boolean(rd.at(s, sp, "adapter_bias"), sp / "adapter_bias");
  const std::size_t n_layers = detail::count(rd, rd.at(s, sp, "layers"), sp / "layers");
  for (std::size_t i = 0; i < n_layers; ++i) {
    SgnnParams p = SgnnParams::make(c.sgnn_dims, 0, c.adapter_bias);
    p.beta_ll = rd.number(rd.at(s, sp, "beta_ll"), sp / "beta_ll");
    p.beta_lt = rd.number(rd.at(s, sp, "beta_lt"), sp / "beta_lt");
    p.dropout = rd.number(rd.at(s, sp, "dropout"), sp / "dropout");
    c.layers.push_back(std::move(p));
  }
  const Json& h = rd.at(doc, root, "heads");
  if (!h.is_null()) {
    const JsonPath hp = root / "heads";
    rd.only_keys(h, hp, {"lane_dim", "te_dim", "hidden", "topo_dim"});
    c.heads = HeadParams::make({detail::count(rd, rd.at(h, hp, "lane_dim"), hp / "lane_dim"),
                                detail::count(rd, rd.at(h, hp, "te_dim"), hp / "te_dim"),
                                detail::count(rd, rd.at(h, hp, "hidden"), hp / "hidden"),
                                detail::count(rd, rd.at(h, hp, "topo_dim"), hp / "topo_dim")},
                               0);
  }

  std::string blob;
  const bool has_blob = doc.contains("blob");
  if (has_blob)
    blob = read_file(manifest_path.parent_path() / rd.string(doc["blob"], root / "blob"));

  const JsonPath tp = root / "tensors";
  const Json& tensors = rd.array(rd.at(doc, root, "tensors"), tp);
  std::size_t k = 0;
  Checkpoint::visit(c, [&](const std::string& name, DenseMatrix& t) {
    const JsonPath ep = tp / k;
    if (k >= tensors.size()) rd.fail(tp, "missing tensor '" + name + "'");
    const Json& e = tensors[k++];
    if (rd.string(rd.at(e, ep, "name"), ep / "name") != name)
      rd.fail(ep / "name", "expected tensor '" + name + "'");
    const Json& shape = rd.array(rd.at(e, ep, "shape"), ep / "shape", 2);
    if (detail::count(rd, shape[0], ep / "shape" / 0) != t.rows() ||
        detail::count(rd, shape[1], ep / "shape" / 1) != t.cols())
      rd.fail(ep / "shape", "expected " + t.shape_string());
    if (has_blob) {
      const std::size_t offset = detail::count(rd, rd.at(e, ep, "offset"), ep / "offset");
      if (offset + 8 * t.size() > blob.size()) rd.fail(ep / "offset", "past the end of the blob");
      for (std::size_t i = 0; i < t.size(); ++i) t.values()[i] = detail::get_le(blob, offset + 8 * i);
    } else {
      const JsonPath dp = ep / "data";
      const Json& data = rd.array(rd.at(e, ep, "data"), dp, t.size());
      for (std::size_t i = 0; i < t.size(); ++i) t.values()[i] = rd.number(data[i], dp / i);
    }
  });
  if (k != tensors.size()) rd.fail(tp / k, "unexpected extra tensor");
  for (const auto& l : c.layers) l.check_shapes();
  return c;
}

}  // namespace lanetopo
