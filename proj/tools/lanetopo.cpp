// lanetopo command-line front end: evaluate, synth, sgnn, init-params,
// gradcheck.

#include <cstdio>
#include <filesystem>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>

#include <CLI11.hpp>

#include "lanetopo/lanetopo.hpp"

namespace fs = std::filesystem;
using namespace lanetopo;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitInvalid = 1;
constexpr int kExitUsage = 2;

void emit_error(const std::string& code, const std::string& message, const Json& extra = {}) {
  Json line = {{"level", "error"}, {"code", code}, {"message", message}};
  if (extra.is_object()) line.update(extra);
  std::cerr << line.dump() << '\n';
}

void emit_parse_error(const ParseError& e) {
  Json extra = {{"path", e.path()}};
  if (e.offset()) extra["offset"] = *e.offset();
  emit_error("parse_error", e.what(), extra);
}

RunConfig load_config(const std::string& path) {
  if (path.empty()) return {};
  return parse_run_config(read_file(path));
}

std::size_t resolve_threads(const RunConfig& config, std::optional<std::size_t> flag) {
  std::size_t threads = config.threads;
  if (auto env = threads_from_env()) threads = *env;
  if (flag) threads = *flag;
  if (threads == 0) throw InvalidInput("thread count must be at least 1");
  return threads;
}

// ---------------------------------------------------------------------------

struct EvaluateArgs {
  std::string gt, pred, config, out;
  bool per_frame = false;
  bool resample = false;
  std::optional<std::size_t> threads;
};

int run_evaluate(const EvaluateArgs& a) {
  RunConfig config = load_config(a.config);
  config.eval.threads = resolve_threads(config, a.threads);
  const auto gt = load_scene_dir(a.gt, {a.resample, true, config.eval});
  const auto pred = load_scene_dir(a.pred, {a.resample, false, config.eval});
  bool invalid = false;
  for (const auto& [dir, set] : {std::pair{a.gt, &gt}, std::pair{a.pred, &pred}}) {
    for (const auto& fv : set->violations) {
      emit_error("validation", fv.violation.message,
                 {{"file", (fs::path(dir) / fv.file).string()},
                  {"path", fv.violation.path},
                  {"kind", violation_kind_name(fv.violation.kind)}});
      invalid = true;
    }
  }
  if (invalid) return kExitInvalid;
  const Json doc = evaluation_document(gt.frames, pred.frames, config.eval, a.per_frame);
  write_file(a.out, dump_json(doc));
  return kExitOk;
}

// ---------------------------------------------------------------------------

/// SPEC is a JSON file, or comma-separated key=value pairs using the
/// SynthSpec field names (bands as lo:hi).
SynthSpec parse_perturb(const std::string& spec, SynthSpec base) {
  if (spec.empty()) return base;
  if (fs::is_regular_file(spec)) return parse_synth_spec(read_file(spec), base);
  Json obj = Json::object();
  std::stringstream ss(spec);
  std::string item;
  while (std::getline(ss, item, ',')) {
    const auto eq = item.find('=');
    if (eq == std::string::npos) throw InvalidInput("perturb: expected key=value, got '" + item + "'");
    const std::string key = item.substr(0, eq), value = item.substr(eq + 1);
    const auto colon = value.find(':');
    try {
      if (colon != std::string::npos)
        obj[key] = {std::stod(value.substr(0, colon)), std::stod(value.substr(colon + 1))};
      else if (value.find_first_of(".eE") == std::string::npos && value.find('-') == std::string::npos)
        obj[key] = std::stoull(value);
      else
        obj[key] = std::stod(value);
    } catch (const std::logic_error&) {
      throw InvalidInput("perturb: bad value for '" + key + "': '" + value + "'");
    }
  }
  return parse_synth_spec(obj.dump(), base);
}

struct SynthArgs {
  std::uint64_t seed = 0;
  std::size_t frames = 10;
  std::string out, perturb, config;
};

int run_synth(const SynthArgs& a) {
  RunConfig config = load_config(a.config);
  SynthSpec gen = config.synth;
  gen.seed = a.seed;
  const SynthSpec noise = parse_perturb(a.perturb, gen);
  const auto gt = generate_frames(gen, a.frames);
  std::vector<FrameGraph> pred;
  pred.reserve(gt.size());
  for (const auto& f : gt) pred.push_back(perturb(f, noise));
  write_scene_dir(fs::path(a.out) / "gt", gt);
  write_scene_dir(fs::path(a.out) / "pred", pred);
  return kExitOk;
}

// ---------------------------------------------------------------------------

struct SgnnArgs {
  std::string params, scene, variant, out, queries, config;
  std::optional<std::size_t> layers;
  std::uint64_t seed = 0;
  bool feedback = false;
};

DenseMatrix rows_matrix(const Json& rows, std::size_t width, const std::string& what) {
  if (!rows.is_array()) throw InvalidInput("queries: '" + what + "' must be an array of rows");
  DenseMatrix m(rows.size(), width);
  for (std::size_t r = 0; r < rows.size(); ++r) {
    if (!rows[r].is_array() || rows[r].size() != width)
      throw InvalidInput("queries: " + what + "[" + std::to_string(r) + "] must have " +
                         std::to_string(width) + " entries");
    for (std::size_t c = 0; c < width; ++c) m(r, c) = rows[r][c].get<double>();
  }
  return m;
}

Json matrix_json(const DenseMatrix& m) {
  Json rows = Json::array();
  for (std::size_t r = 0; r < m.rows(); ++r) rows.push_back(std::vector<double>(m.row(r).begin(), m.row(r).end()));
  return rows;
}

int run_sgnn(const SgnnArgs& a) {
  const RunConfig config = load_config(a.config);
  const Checkpoint ck = load_checkpoint(a.params);
  const auto scene = parse_scene(read_file(a.scene), {false, false, config.eval});
  const FrameGraph& f = scene.frame;
  const std::size_t layers = a.layers.value_or(config.sgnn.layers);
  if (layers == 0 || layers > ck.layers.size())
    throw InvalidInput("checkpoint holds " + std::to_string(ck.layers.size()) +
                       " layers, " + std::to_string(layers) + " requested");
  if (a.feedback && !ck.heads) throw InvalidInput("--feedback needs a checkpoint with heads");

  const std::size_t n_l = f.lanes.size(), n_t = f.tes.size();
  QuerySet q_l(n_l, ck.sgnn_dims.lane_dim), q_t(n_t, ck.sgnn_dims.te_dim);
  if (!a.queries.empty()) {
    const Json q = Json::parse(read_file(a.queries));
    q_l = rows_matrix(q.at("lanes"), ck.sgnn_dims.lane_dim, "lanes");
    q_t = rows_matrix(q.at("traffic_elements"), ck.sgnn_dims.te_dim, "traffic_elements");
    if (q_l.rows() != n_l || q_t.rows() != n_t)
      throw InvalidInput("queries: row counts must match the scene's lanes and traffic elements");
  } else {
    CounterRng rng(a.seed, 0x5155'4552);
    for (double& v : q_l.values()) v = rng.normal();
    for (double& v : q_t.values()) v = rng.normal();
  }

  LayerState graph{f.adj_ll, f.adj_lt, DenseMatrix(kNumAttributes, n_t)};
  for (std::size_t k = 0; k < n_t; ++k)
    for (std::size_t c = 0; c < kNumAttributes; ++c) graph.te_scores(c, k) = f.tes[k].class_scores[c];

  const SgnnOptions options{a.variant.empty() ? config.sgnn.variant : parse_variant(a.variant),
                            config.sgnn.activation};
  std::vector<SgnnParams> stack(ck.layers.begin(), ck.layers.begin() + static_cast<std::ptrdiff_t>(layers));
  if (!a.config.empty()) {
    for (auto& p : stack) {
      p.beta_ll = config.sgnn.beta_ll;
      p.beta_lt = config.sgnn.beta_lt;
    }
  }
  auto next_state = [&](std::size_t, const SgnnForward& out) -> LayerState {
    if (!a.feedback) return graph;
    const auto heads = run_heads(out.lanes, out.te_embedding, out.te_queries, *ck.heads);
    return {heads.topo_ll.confidence, heads.topo_lt.confidence,
            heads.detection.te_scores.transposed()};
  };
  const auto outs = run_sgnn_stack(q_l, q_t, stack, options, graph, next_state);

  Json doc = {{"frame_id", f.frame_id},
              {"variant", variant_name(options.variant)},
              {"layers", layers},
              {"lanes", matrix_json(outs.back().lanes)},
              {"te_embedding", matrix_json(outs.back().te_embedding)},
              {"te_queries", matrix_json(outs.back().te_queries)}};
  write_file(a.out, dump_json(doc));
  return kExitOk;
}

// ---------------------------------------------------------------------------

struct InitArgs {
  std::string out, blob;
  std::uint64_t seed = 0;
  std::size_t layers = 6;
  SgnnDims dims{};
  bool no_heads = false;
  bool no_adapter_bias = false;
};

int run_init(const InitArgs& a) {
  const Checkpoint ck = Checkpoint::make(a.dims, a.layers, a.seed, !a.no_adapter_bias, !a.no_heads);
  save_checkpoint(ck, a.out, a.blob.empty() ? std::nullopt : std::optional<fs::path>(a.blob));
  return kExitOk;
}

// ---------------------------------------------------------------------------

struct GradcheckArgs {
  std::uint64_t seed = 0;
  GradCheckOptions options{};
  bool verbose = false;
};

int run_gradcheck_cmd(const GradcheckArgs& a) {
  const auto suite = run_gradcheck(a.seed, a.options);
  if (a.verbose)
    for (const auto& t : suite.tensors)
      std::printf("%-40s entries=%-4zu max_rel=%.3e max_abs=%.3e\n", t.name.c_str(), t.entries,
                  t.max_rel_error, t.max_abs_error);
  const bool ok = suite.passed(a.options);
  std::printf("seed=%llu tensors=%zu max_relative_error=%.3e stop_gradient_max=%g %s\n",
              static_cast<unsigned long long>(a.seed), suite.tensors.size(), suite.max_rel_error(),
              suite.stop_gradient_max, ok ? "PASS" : "FAIL");
  return ok ? kExitOk : kExitInvalid;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Lane topology evaluation, scene synthesis and SGNN kernels"};
  app.require_subcommand(1);

  EvaluateArgs ev;
  auto* evaluate_cmd = app.add_subcommand("evaluate", "Score prediction scenes against ground truth");
  evaluate_cmd->add_option("--gt", ev.gt, "Directory of ground-truth scene files")->required()->check(CLI::ExistingDirectory);
  evaluate_cmd->add_option("--pred", ev.pred, "Directory of prediction scene files")->required()->check(CLI::ExistingDirectory);
  evaluate_cmd->add_option("--config", ev.config, "Run configuration (JSON)")->check(CLI::ExistingFile);
  evaluate_cmd->add_option("--out", ev.out, "Report path")->required();
  evaluate_cmd->add_flag("--per-frame", ev.per_frame, "Add one report per frame");
  evaluate_cmd->add_flag("--resample", ev.resample, "Resample lanes to 11 points on load");
  evaluate_cmd->add_option("--threads", ev.threads, "Worker threads (overrides LANETOPO_THREADS)")->check(CLI::PositiveNumber);

  SynthArgs sy;
  auto* synth_cmd = app.add_subcommand("synth", "Write synthetic gt/ and pred/ scene directories");
  synth_cmd->add_option("--seed", sy.seed, "Scene seed")->required();
  synth_cmd->add_option("--frames", sy.frames, "Number of frames")->required();
  synth_cmd->add_option("--out", sy.out, "Output directory")->required();
  synth_cmd->add_option("--perturb", sy.perturb, "Perturbation: JSON file or key=value[,key=value]");
  synth_cmd->add_option("--config", sy.config, "Run configuration (JSON)")->check(CLI::ExistingFile);

  SgnnArgs sg;
  auto* sgnn_cmd = app.add_subcommand("sgnn", "Run stacked SGNN layers over one scene");
  sgnn_cmd->add_option("--params", sg.params, "Parameter manifest")->required()->check(CLI::ExistingFile);
  sgnn_cmd->add_option("--scene", sg.scene, "Scene file providing the graph")->required()->check(CLI::ExistingFile);
  sgnn_cmd->add_option("--variant", sg.variant, "sg or skg (default: config, else skg)")->check(CLI::IsMember({"sg", "skg"}));
  sgnn_cmd->add_option("--layers", sg.layers, "Number of layers to run");
  sgnn_cmd->add_option("--out", sg.out, "Output query file")->required();
  sgnn_cmd->add_option("--queries", sg.queries, "Initial queries (JSON); random when absent")->check(CLI::ExistingFile);
  sgnn_cmd->add_option("--seed", sg.seed, "Seed for random initial queries");
  sgnn_cmd->add_option("--config", sg.config, "Run configuration (JSON)")->check(CLI::ExistingFile);
  sgnn_cmd->add_flag("--feedback", sg.feedback, "Feed each layer's topology-head output to the next");

  InitArgs in;
  auto* init_cmd = app.add_subcommand("init-params", "Write a freshly initialized parameter checkpoint");
  init_cmd->add_option("--out", in.out, "Manifest path")->required();
  init_cmd->add_option("--blob", in.blob, "Store tensors in this sidecar file");
  init_cmd->add_option("--seed", in.seed, "Initialization seed");
  init_cmd->add_option("--layers", in.layers, "SGNN layers")->check(CLI::PositiveNumber);
  init_cmd->add_option("--lane-dim", in.dims.lane_dim, "Lane feature width")->check(CLI::PositiveNumber);
  init_cmd->add_option("--te-dim", in.dims.te_dim, "TE feature width")->check(CLI::PositiveNumber);
  init_cmd->add_option("--embed-hidden", in.dims.embed_hidden, "TE embedding hidden width")->check(CLI::PositiveNumber);
  init_cmd->add_flag("--no-heads", in.no_heads, "Omit prediction heads");
  init_cmd->add_flag("--no-adapter-bias", in.no_adapter_bias, "Adapter without bias");

  GradcheckArgs gc;
  auto* grad_cmd = app.add_subcommand("gradcheck", "Finite-difference check of every analytic gradient");
  grad_cmd->add_option("--seed", gc.seed, "Seed")->required();
  grad_cmd->add_option("--eps", gc.options.eps, "Central-difference step")->check(CLI::PositiveNumber);
  grad_cmd->add_option("--tolerance", gc.options.tolerance, "Maximum relative error")->check(CLI::PositiveNumber);
  grad_cmd->add_flag("--verbose", gc.verbose, "One line per tensor");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    emit_error("usage", e.what());
    const auto active = app.get_subcommands();
    std::cerr << (active.empty() ? app.help() : active.front()->help());
    return kExitUsage;
  }

  try {
    if (*evaluate_cmd) return run_evaluate(ev);
    if (*synth_cmd) return run_synth(sy);
    if (*sgnn_cmd) return run_sgnn(sg);
    if (*init_cmd) return run_init(in);
    if (*grad_cmd) return run_gradcheck_cmd(gc);
  } catch (const ParseError& e) {
    emit_parse_error(e);
    return kExitInvalid;
  } catch (const InvalidInput& e) {
    emit_error("invalid_input", e.what());
    return kExitInvalid;
  } catch (const Json::exception& e) {
    emit_error("invalid_input", e.what());
    return kExitInvalid;
  } catch (const fs::filesystem_error& e) {
    emit_error("io", e.what());
    return kExitInvalid;
  }
  return kExitUsage;
}
