#pragma once

#include <string>
#include <vector>

#include "fgfa/nets.hpp"
#include "fgfa/synthetic.hpp"
#include "fgfa/tensor.hpp"

namespace fgfa {

class Rng;

struct TrainConfig {
  int k_train = 2;     // neighbors sampled per step
  int t_range = 10;    // sampling radius, matches the inference window by default
  int iterations = 200;
  double lr_initial = 1e-3;
  double lr_final = 1e-4;
  double lr_switch_frac = 2.0 / 3.0;  // fraction of iterations on the initial rate
  double momentum = 0.9;
  double pos_weight = 8.0;     // class-balance factor for foreground cells
  double box_weight = 1.0;     // box-regression term scale
  double flow_noise_sigma = 0.0;
  uint32_t seed = 1;
  std::string dump_dir = "nan_dump";  // diagnostics on non-finite loss

  void validate() const;
};

// Neighbor indices for one training step: up to k_train distinct frames
// drawn uniformly from [reference-t_range, reference+t_range] within the
// video, plus the reference itself. Sorted ascending.
std::vector<int> sample_training_window(int reference, int t_range, int k_train, int num_frames,
                                        Rng& rng);

// Per-cell training targets: class id per cell (0 = background) and anchor
// offsets for the positive cells.
struct CellTargets {
  int hf = 0, wf = 0;
  std::vector<int> cls;
  std::vector<double> tx, ty, tw, th;
  int npos = 0;
};

CellTargets make_targets(const std::vector<Track>& tracks, int frame, const NetConfig& cfg,
                         int hf, int wf);

// Cross-entropy over per-cell class logits (foreground cells weighted by
// pos_weight, normalized by total weight) plus smooth-L1 on the offsets of
// positive cells (normalized by their count).
template <typename T>
double detect_loss(const TensorT<T>& logits, const CellTargets& targets, const NetConfig& cfg,
                   double pos_weight, double box_weight, TensorT<T>* dlogits);

// Loss of the full aggregation path for one reference frame: features for
// every window frame, flow-guided alignment, similarity-softmax weighting,
// aggregation, detection head, detection loss. When `grads` is non-null the
// analytic gradients for every model parameter are written there.
// `flows` holds one feature-resolution field per window member, aligning
// that member to the reference; the entry at ref_pos is ignored.
template <typename T>
double fgfa_forward_backward(const ModelT<T>& model, const std::vector<TensorT<T>>& frames,
                             int ref_pos, const std::vector<TensorT<T>>& flows,
                             const CellTargets& targets, double pos_weight, double box_weight,
                             ModelT<T>* grads, TensorT<T>* out_logits = nullptr);

struct TrainClip {
  SceneSpec spec;
  std::vector<Tensor> frames;
  std::vector<Track> tracks;
};

struct TrainLogRow {
  long step = 0;
  double loss = 0.0;
  double lr = 0.0;
};

struct TrainResult {
  Model model;
  std::vector<TrainLogRow> log;
  std::string final_rng_state;
};

TrainResult train(const std::vector<TrainClip>& clips, const Model& init,
                  const TrainConfig& cfg);

void write_train_log_csv(const std::string& path, const std::vector<TrainLogRow>& rows);

}  // namespace fgfa
