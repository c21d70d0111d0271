#pragma once

// Dual-head surrogate of the recourse value function. u0 and xi are each
// encoded as sets of scalars: a shared element MLP per coordinate, sum
// pooling, then a post-pooling MLP. The two embeddings are concatenated and
// fed to a head MLP that predicts min-max normalised (Q_obj, Q_fea).

#include <cstdint>
#include <filesystem>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "l2occg/diffkit.hpp"
#include "l2occg/kernels.hpp"
#include "l2occg/linalg.hpp"
#include "l2occg/recourse.hpp"
#include "l2occg/serialize.hpp"
#include "l2occg/uncertainty_sets.hpp"

namespace l2occg {

struct ValueNetArch {
  std::vector<int> elem{32, 32};  // element MLP widths after the scalar input
  int post = 64;                  // post-pooling width
  std::vector<int> head{128, 64};  // hidden widths of the head; output is 2

  void validate() const;
  bool operator==(const ValueNetArch&) const = default;
};

/// y = x W + b with W stored (in x out).
struct Dense {
  Mat W;
  Vec b;
};

struct NormStats {
  double obj_min = 0.0, obj_max = 1.0;
  double fea_min = 0.0, fea_max = 1.0;

  double obj_range() const { return obj_max - obj_min; }
  double fea_range() const { return fea_max - fea_min; }
};

struct ValueNetParams {
  ValueNetArch arch;
  // Every layer is followed by a ReLU except the last head layer.
  std::vector<Dense> elem_x, elem_xi, post_x, post_xi, head;
  NormStats norm;

  static ValueNetParams init(const ValueNetArch& arch, std::uint64_t seed);
  static ValueNetParams zeros(const ValueNetArch& arch);

  /// Every weight (in x out) and bias (1 x out) in a fixed order.
  std::vector<diff::Tensor> pack() const;
  void unpack(std::span<const diff::Tensor> t);
  std::size_t parameter_count() const;
};

struct Prediction {
  double obj = 0.0;
  double fea = 0.0;
};

/// Concatenated (Phi_x, Phi_xi).
Vec encode(const ValueNetParams& p, const Vec& u0, const Vec& xi);

/// Raw-unit predictions.
Prediction forward(const ValueNetParams& p, const Vec& u0, const Vec& xi);

struct XiGradients {
  Vec obj, fea;
};

/// Raw-unit gradients of both heads with respect to xi.
XiGradients grad_wrt_xi(const ValueNetParams& p, const Vec& u0, const Vec& xi);

double normalize_obj(const NormStats& s, double q);
double denormalize_obj(const NormStats& s, double t);
double normalize_fea(const NormStats& s, double q);
double denormalize_fea(const NormStats& s, double t);

/// Inference at a fixed u0 over a batch of xi (one per row). The u0 branch
/// is evaluated once at construction. Outputs are in normalised units.
class SurrogateEval {
 public:
  SurrogateEval(const ValueNetParams& p, const Vec& u0);

  /// Normalised outputs, one row per xi row: columns (obj, fea).
  Mat outputs(const Mat& xis) const;

  /// Outputs plus the xi-gradient of sum_r W(r,0) obj_r + W(r,1) fea_r,
  /// one row per xi, where W = weigh(outputs) is computed between the
  /// forward and backward passes.
  Mat outputs_and_grad(const Mat& xis, const std::function<Mat(const Mat& out)>& weigh, Mat& grad) const;

  const ValueNetParams& params() const { return *p_; }

 private:
  const ValueNetParams* p_;
  Eigen::RowVectorXd head_bias_;  // u0 branch folded into the first head layer
};

struct RecourseRecord {
  Vec u0, xi;
  double q_obj = 0.0;
  double q_fea = 0.0;
};

struct RecourseDataset {
  std::vector<RecourseRecord> records;
  std::uint64_t instance_seed = 0;
  std::string set_spec;  // hash of the sampling set(s)
  double w_slack = 0.0;
  int dropped = 0;       // solver failures that were resampled
};

struct DatasetOptions {
  double out_of_set_fraction = 0.2;
  double out_scale_lo = 1.2;
  double out_scale_hi = 2.0;
  /// u0 is drawn from the input box shrunk by this fraction of its width
  /// on each side.
  double u0_margin = 0.0;
  int max_resamples = 20;
  Exec exec = Exec::parallel;
  QpSettings qp;
};

/// Deterministic for a given seed whatever the worker count: record i draws
/// from its own stream.
RecourseDataset generate_dataset(const HvacInstance& inst, const UncertaintySet& set, int n_samples,
                                 std::uint64_t seed, const DatasetOptions& options = {});

/// Point outside the set along the ray from the set's anchor through
/// `inside`, at `scale` times the boundary distance.
Vec push_outside(const UncertaintySet& set, const Vec& inside, double scale, Rng& rng);

/// Concatenates datasets for the same instance.
RecourseDataset pool_datasets(const std::vector<RecourseDataset>& parts);

void write_dataset_csv(const std::filesystem::path& path, const RecourseDataset& data);
RecourseDataset read_dataset_csv(const std::filesystem::path& path);

struct TrainHyper {
  double lr = 1e-3;
  int batch = 128;
  int epochs = 500;
  int patience = 30;
  double val_frac = 0.2;
  std::uint64_t seed = 0;
  bool verbose = false;
};

struct TrainHistory {
  std::vector<double> train_loss, val_loss;
  int best_epoch = -1;
  double best_val = 0.0;
  bool diverged = false;
};

struct TrainedValueNet {
  ValueNetParams params;
  TrainHistory history;
  std::vector<std::size_t> train_idx, val_idx;
};

/// Joint MSE on min-max normalised targets; statistics from the training
/// split only. Returns the best-validation checkpoint.
TrainedValueNet train_value_net(const RecourseDataset& data, const ValueNetArch& arch, const TrainHyper& hyper);

/// Min-max statistics of a subset. A constant label gets a unit range so
/// normalisation stays invertible.
NormStats compute_norm_stats(const RecourseDataset& data, const std::vector<std::size_t>& idx);

/// Mean over records of the squared normalised errors of both heads.
double normalized_mse(const ValueNetParams& p, const RecourseDataset& data, const std::vector<std::size_t>& idx);

Json to_json(const ValueNetParams& p);
ValueNetParams value_net_from_json(const Json& j);
void save_value_net(const std::filesystem::path& path, const ValueNetParams& p);
ValueNetParams load_value_net(const std::filesystem::path& path);

}  // namespace l2occg
