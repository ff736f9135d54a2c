// Acceptance checks. `acceptance --criterion N` runs one check; without
// arguments every check runs. Each prints a single PASS/FAIL line.

#include <sys/wait.h>
#include <unistd.h>

#include <charconv>
#include <cstdio>
#include <filesystem>
#include <functional>
#include <sstream>
#include <string>

#include "oracles.hpp"

using namespace lanetopo;
namespace fs = std::filesystem;

namespace {

struct Outcome {
  bool pass = false;
  std::string detail;
};

std::string fmt(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.7g", v);
  return buf;
}

DenseMatrix random_matrix(CounterRng& rng, std::size_t r, std::size_t c, double lo = -1, double hi = 1) {
  DenseMatrix m(r, c);
  for (double& v : m.values()) v = rng.uniform(lo, hi);
  return m;
}

std::vector<FrameGraph> perturbed(const std::vector<FrameGraph>& gts, const SynthSpec& spec) {
  std::vector<FrameGraph> out;
  for (const auto& g : gts) out.push_back(perturb(g, spec));
  return out;
}

Outcome reference_score() {
  const double v = ols(0.221, 0.591, 0.027, 0.149);
  return {std::abs(v - 0.340) <= 0.0005, "OLS(0.221, 0.591, 0.027, 0.149) = " + fmt(v) + ", expected 0.340 +/- 0.0005"};
}

Outcome echo_is_perfect() {
  SynthSpec spec;
  spec.seed = 101;
  const auto gts = generate_frames(spec, 50);
  const EvalReport r = evaluate(gts, gts, EvalConfig{});
  const bool ok = r.det_l == 1.0 && r.det_l_chamfer == 1.0 && r.det_t == 1.0 && r.top_ll == 1.0 &&
                  r.top_lt == 1.0 && r.ols == 1.0;
  return {ok, "50 frames: DET_l " + fmt(r.det_l) + ", DET_l(chamfer) " + fmt(r.det_l_chamfer) + ", DET_t " +
                  fmt(r.det_t) + ", TOP_ll " + fmt(r.top_ll) + ", TOP_lt " + fmt(r.top_lt) + ", OLS " +
                  fmt(r.ols)};
}

Outcome solvers_match_exhaustive_search() {
  CounterRng rng(303);
  std::size_t assignment_bad = 0, frechet_bad = 0;
  double worst = 0.0;
  for (int trial = 0; trial < 200; ++trial) {
    const std::size_t r = 1 + rng.index(7), c = 1 + rng.index(7);
    const DenseMatrix cost = oracle::random_costs(rng, r, c);
    const Matching m = hungarian(cost);
    if (m.pairs.size() != std::min(r, c) || matching_cost(cost, m) != oracle::brute_force_assignment(cost))
      ++assignment_bad;
  }
  for (int trial = 0; trial < 200; ++trial) {
    const auto a = oracle::random_curve(rng, 1 + rng.index(6));
    const auto b = oracle::random_curve(rng, 1 + rng.index(6));
    const double d = std::abs(frechet_distance(std::span<const Point3>(a), std::span<const Point3>(b)) -
                              oracle::brute_force_frechet(a, b));
    worst = std::max(worst, d);
    if (d > 1e-12) ++frechet_bad;
  }
  return {assignment_bad == 0 && frechet_bad == 0,
          "assignment mismatches " + std::to_string(assignment_bad) + "/200, Frechet mismatches " +
              std::to_string(frechet_bad) + "/200 (max |diff| " + fmt(worst) + ")"};
}

Outcome gradients_match_finite_differences() {
  const GradCheckOptions o;
  double worst = 0.0, stop = 0.0;
  bool ok = true;
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    const GradCheckSuite s = run_gradcheck(seed, o);
    worst = std::max(worst, s.max_rel_error());
    stop = std::max(stop, s.stop_gradient_max);
    ok = ok && s.passed(o);
  }
  return {ok && stop == 0.0, "10 seeds: max relative error " + fmt(worst) + " (limit " + fmt(o.tolerance) +
                                 "), stop-gradient max " + fmt(stop)};
}

Outcome zero_beta_degenerates() {
  const SgnnDims dims{8, 6, 12};
  double worst = 0.0;
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    CounterRng rng(seed, 5);
    SgnnParams p = SgnnParams::make(dims, seed);
    p.beta_ll = p.beta_lt = 0.0;
    const std::size_t n_l = 2 + rng.index(5), n_t = 1 + rng.index(4);
    const DenseMatrix ql = random_matrix(rng, n_l, dims.lane_dim), qt = random_matrix(rng, n_t, dims.te_dim);
    const LayerState st{random_matrix(rng, n_l, n_l, 0, 1), random_matrix(rng, n_l, n_t, 0, 1),
                        random_matrix(rng, kNumAttributes, n_t, 0, 1)};
    const LayerState none = LayerState::empty(n_l, n_t);
    for (auto v : {SgnnVariant::kSceneGraph, SgnnVariant::kKnowledgeGraph}) {
      const SgnnForward with = sgnn_layer(ql, qt, st, p, {v, Activation::kRelu});
      const SgnnForward without = sgnn_layer(ql, qt, none, p, {v, Activation::kRelu});
      worst = std::max(worst, max_abs_diff(with.lanes, without.lanes));
    }
    // Scene graph at beta = 0: plain per-lane transform, no message passing.
    const SgnnForward sg = sgnn_layer(ql, qt, st, p, {SgnnVariant::kSceneGraph, Activation::kRelu});
    const DenseMatrix self = relu(matmul(ql, p.gcn_ll));
    DenseMatrix expect = ql + p.adapter.forward(relu(hconcat(self, DenseMatrix(n_l, dims.lane_dim))));
    worst = std::max(worst, max_abs_diff(sg.lanes, expect));
    // Zero propagation weights and bias: the layer is the identity.
    SgnnParams id = p;
    id.gcn_ll *= 0.0;
    id.adapter.bias *= 0.0;
    worst = std::max(worst, max_abs_diff(sgnn_layer(ql, qt, st, id, {SgnnVariant::kSceneGraph}).lanes, ql));
  }
  return {worst <= 1e-12, "20 random layers: max |diff| " + fmt(worst) + " (limit 1e-12)"};
}

Outcome sweeps_are_monotone() {
  SynthSpec base;
  base.seed = 606;
  const auto gts = generate_frames(base, 50);
  std::ostringstream msg;
  bool ok = true;
  double last = 2.0;
  msg << "DET_l over sigma {0, .5, 1.5, 3.5}:";
  for (double sigma : {0.0, 0.5, 1.5, 3.5}) {
    SynthSpec s = base;
    s.point_sigma = sigma;
    const double d = evaluate(gts, perturbed(gts, s), EvalConfig{}).det_l;
    msg << " " << fmt(d);
    ok = ok && d <= last;
    last = d;
  }
  last = 2.0;
  msg << "; TOP_ll over flip {0, .2, .5}:";
  for (double flip : {0.0, 0.2, 0.5}) {
    SynthSpec s = base;
    s.edge_flip = flip;
    const double t = evaluate(gts, perturbed(gts, s), EvalConfig{}).top_ll;
    msg << " " << fmt(t);
    ok = ok && t <= last;
    last = t;
  }
  return {ok, msg.str()};
}

Outcome reversal_is_caught() {
  SynthSpec spec;
  spec.seed = 707;
  spec.point_sigma = 0.3;
  const auto gts = generate_frames(spec, 30);
  const auto preds = perturbed(gts, spec);
  auto flipped = preds;
  for (auto& f : flipped)
    for (auto& l : f.lanes) l = reversed(l);
  const EvalReport a = evaluate(gts, preds, EvalConfig{});
  const EvalReport b = evaluate(gts, flipped, EvalConfig{});
  return {a.det_l_chamfer == b.det_l_chamfer && b.det_l < a.det_l,
          "Chamfer DET " + fmt(a.det_l_chamfer) + " -> " + fmt(b.det_l_chamfer) + ", DET_l " + fmt(a.det_l) +
              " -> " + fmt(b.det_l)};
}

int run_cli(const std::string& args) {
  const int status = std::system((std::string(LANETOPO_CLI) + " " + args + " >/dev/null 2>&1").c_str());
  return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

Outcome reports_are_thread_invariant() {
  SynthSpec spec;
  spec.seed = 808;
  spec.point_sigma = 1.0;
  spec.edge_flip = 0.15;
  spec.lane_add = 0.2;
  spec.te_add = 0.2;
  spec.fp_confidence = {0.05, 0.6};
  spec.tp_confidence = {0.4, 1.0};
  const auto gts = generate_frames(spec, 200);
  const auto preds = perturbed(gts, spec);
  EvalConfig one, eight;
  eight.threads = 8;
  const bool in_process = dump_json(evaluation_document(gts, preds, one, true)) ==
                          dump_json(evaluation_document(gts, preds, eight, true));

  const fs::path dir = fs::temp_directory_path() / ("lanetopo_acceptance_" + std::to_string(::getpid()));
  fs::remove_all(dir);
  write_scene_dir(dir / "gt", gts);
  write_scene_dir(dir / "pred", preds);
  const std::string common = "evaluate --per-frame --gt " + (dir / "gt").string() + " --pred " +
                             (dir / "pred").string() + " --threads 8 --out ";
  const int c1 = run_cli(common + (dir / "a.json").string());
  const int c2 = run_cli(common + (dir / "b.json").string());
  const bool cli = c1 == 0 && c2 == 0 && read_file(dir / "a.json") == read_file(dir / "b.json");
  fs::remove_all(dir);
  return {in_process && cli, std::string("200 frames, 8 threads: in-process ") +
                                 (in_process ? "identical" : "different") + ", two CLI runs " +
                                 (cli ? "identical" : "different or failed")};
}

struct Criterion {
  const char* name;
  std::function<Outcome()> check;
};

const std::vector<Criterion>& criteria() {
  static const std::vector<Criterion> all{
      {"reference OLS value", reference_score},
      {"ground truth scored against itself", echo_is_perfect},
      {"assignment and Frechet against exhaustive search", solvers_match_exhaustive_search},
      {"analytic gradients against finite differences", gradients_match_finite_differences},
      {"SGNN with beta = 0 degenerates to per-lane update", zero_beta_degenerates},
      {"noise sweeps lower the scores monotonically", sweeps_are_monotone},
      {"reversed lanes: Chamfer blind, Frechet not", reversal_is_caught},
      {"reports independent of thread count", reports_are_thread_invariant},
  };
  return all;
}

bool run_one(std::size_t n) {
  const Criterion& c = criteria().at(n - 1);
  Outcome o;
  try {
    o = c.check();
  } catch (const std::exception& e) {
    o = {false, std::string("exception: ") + e.what()};
  }
  std::printf("criterion %zu: %s  %s: %s\n", n, o.pass ? "PASS" : "FAIL", c.name, o.detail.c_str());
  std::fflush(stdout);
  return o.pass;
}

}  // namespace

int main(int argc, char** argv) {
  const std::size_t count = criteria().size();
  if (argc == 1) {
    bool all = true;
    for (std::size_t n = 1; n <= count; ++n) all = run_one(n) && all;
    return all ? 0 : 1;
  }
  std::size_t n = 0;
  const std::string_view value = argc == 3 ? argv[2] : "";
  const auto [ptr, ec] = std::from_chars(value.data(), value.data() + value.size(), n);
  if (argc != 3 || std::string_view(argv[1]) != "--criterion" || ec != std::errc() ||
      ptr != value.data() + value.size() || n < 1 || n > count) {
    std::fprintf(stderr, "usage: %s [--criterion 1..%zu]\n", argv[0], count);
    return 2;
  }
  return run_one(n) ? 0 : 1;
}
