// Generates a small synthetic set, degrades it, scores it, then pushes one
// frame through two SGNN layers and the heads to get a training loss.

#include <cstdio>

#include "lanetopo/lanetopo.hpp"

using namespace lanetopo;

int main() {
  SynthSpec spec;
  spec.seed = 42;
  const auto gt = generate_frames(spec, 20);

  SynthSpec noisy = spec;
  noisy.point_sigma = 0.3;
  noisy.lane_drop = 0.1;
  noisy.lane_add = 0.1;
  noisy.edge_flip = 0.05;
  noisy.tp_confidence = {0.6, 1.0};
  noisy.fp_confidence = {0.0, 0.5};
  std::vector<FrameGraph> pred;
  for (const auto& f : gt) pred.push_back(perturb(f, noisy));

  const EvalReport r = evaluate(gt, pred, EvalConfig{});
  std::printf("DET_l %.4f  DET_l(chamfer) %.4f  DET_t %.4f  TOP_ll %.4f  TOP_lt %.4f  OLS %.4f\n",
              r.det_l, r.det_l_chamfer, r.det_t, r.top_ll, r.top_lt, r.ols);

  // Small widths keep this instant; the defaults are 256.
  const SgnnDims dims{32, 32, 64};
  const FrameGraph& frame = gt.front();
  const std::size_t n_l = frame.lanes.size() + 2, n_t = frame.tes.size() + 2;
  CounterRng rng(7);
  QuerySet q_l(n_l, dims.lane_dim), q_t(n_t, dims.te_dim);
  for (double& v : q_l.values()) v = rng.normal();
  for (double& v : q_t.values()) v = rng.normal();

  const std::vector<SgnnParams> layers{SgnnParams::make(dims, 1), SgnnParams::make(dims, 2)};
  const HeadParams heads = HeadParams::make({dims.lane_dim, dims.te_dim, dims.lane_dim, 16}, 3);
  auto feedback = [&](std::size_t, const SgnnForward& out) -> LayerState {
    const auto h = run_heads(out.lanes, out.te_embedding, out.te_queries, heads);
    return {h.topo_ll.confidence, h.topo_lt.confidence, h.detection.te_scores.transposed()};
  };
  const auto outs = run_sgnn_stack(q_l, q_t, layers, {}, LayerState::empty(n_l, n_t), feedback);

  std::vector<FramePrediction> per_layer;
  for (const auto& o : outs)
    per_layer.push_back(run_heads(o.lanes, o.te_embedding, o.te_queries, heads).prediction());
  const LossComponents loss = total_loss_layers(per_layer, frame);
  std::printf("loss %.4f (te %.4f/%.4f/%.4f, lc %.4f/%.4f, top %.4f/%.4f)\n", loss.total,
              loss.te_cls, loss.te_reg, loss.te_iou, loss.lc_cls, loss.lc_reg, loss.top_ll,
              loss.top_lt);
}
