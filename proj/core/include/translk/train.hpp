#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <iosfwd>
#include <memory>
#include <string>
#include <vector>

#include "translk/config.hpp"
#include "translk/grad_check.hpp"
#include "translk/network.hpp"

namespace translk {

/// Integer label volume, shape (n, 1, D, H, W).
struct LabelVolume {
  Shape shape;
  std::vector<std::int32_t> data;

  LabelVolume() = default;
  explicit LabelVolume(const Shape& s) : shape(s), data(static_cast<std::size_t>(s.numel()), 0) {}
};

struct SegBatch {
  Tensor<float> images;  // (n, in_channels, D, H, W)
  LabelVolume labels;
};

/// CE + (1 - mean soft Dice over all classes), computed over the whole batch.
/// Soft Dice per class k is (2 sum p_k y_k + eps) / (sum p_k + sum y_k + eps).
template <class T>
Var<T> dice_ce_loss(Tape<T>& tape, const Var<T>& logits, const LabelVolume& labels,
                    double eps = 1e-5);

/// Voxelwise argmax over the class axis.
template <class T>
LabelVolume argmax_labels(const Tensor<T>& logits);

/// 2|A & B| / (|A| + |B|) for the masks label == class_id; 1 when both are empty.
double dsc(const LabelVolume& pred, const LabelVolume& truth, std::int32_t class_id);

struct Ellipsoid {
  std::int32_t label = 1;
  std::array<double, 3> center{};  // voxel coordinates (d, h, w)
  std::array<double, 3> radii{};
};

struct SyntheticVolume {
  Tensor<float> image;  // (1, in_channels, D, D, D)
  LabelVolume labels;   // (1, 1, D, D, D)
  std::vector<Ellipsoid> ellipsoids;
};

/// Foreground classes draw one axis-aligned ellipsoid each on a zero
/// background; voxel centers inside an ellipsoid take its label, later
/// classes overwrite earlier ones, and ellipsoids are redrawn until every
/// class keeps at least 1% of the voxels. The image is label / (K - 1) plus
/// Gaussian noise with sigma 0.1 in every input channel. The stream for
/// volume `index` depends only on (seed, index).
SyntheticVolume gen_synthetic(std::uint64_t seed, std::uint64_t index, Index size,
                              Index in_channels, Index num_classes);

/// Volumes first .. first + n - 1 stacked along the batch axis.
SegBatch make_batch(std::uint64_t seed, std::uint64_t first, Index n, Index size,
                    Index in_channels, Index num_classes);

/// Index of the first held-out evaluation volume.
inline constexpr std::uint64_t kEvalIndexBase = 1ULL << 40;

/// Decoupled weight decay Adam (beta 0.9 / 0.999, eps 1e-8).
class AdamW {
 public:
  AdamW(const ParamStore<float>& store, double weight_decay);
  void step(ParamStore<float>& store, double lr);
  std::int64_t steps() const { return t_; }

 private:
  double wd_;
  std::int64_t t_ = 0;
  std::vector<std::vector<double>> m_, v_;
};

/// Scales every gradient by max_norm / norm when the global L2 norm exceeds
/// max_norm. Returns the norm before scaling.
double clip_grad_norm(ParamStore<float>& store, double max_norm);

/// Cosine decay from peak at step 0 to zero at step `total`.
double cosine_lr(double peak, int step, int total);

struct TrainReport {
  std::vector<double> losses;
  std::vector<double> dsc;  // per class, index 0 is background
  double mean_foreground_dsc = 0.0;
  double seconds = 0.0;
  std::uint64_t seed = 0;
  std::uint64_t config_hash = 0;
  bool diverged = false;
};

struct TrainResult {
  TrainReport report;
  std::unique_ptr<Network> net;
  std::unique_ptr<ParamStore<float>> params;
};

using StepCallback = std::function<void(int step, double loss)>;

/// Trains on the synthetic task, then scores the held-out batch. Stops early
/// and sets `diverged` if the loss becomes non-finite.
TrainResult train_toy(const Config& cfg, const StepCallback& on_step = {});

/// Evaluation-mode forward in batches of one.
LabelVolume predict_labels(const Network& net, ParamStore<float>& params,
                           const Tensor<float>& images);

/// `step,loss` rows, then `# dsc,class,value` footer rows.
void write_report_csv(std::ostream& os, const TrainReport& r);
/// Writes report.csv and config.txt into dir.
void write_report(const std::filesystem::path& dir, const TrainReport& r, const Config& cfg);

struct GradCheckItem {
  std::string name;
  double threshold = 1e-4;
  std::function<GradCheckResult(std::uint64_t seed)> run;
};

struct GradCheckEntry {
  std::string name;
  GradCheckResult result;
  double threshold = 0.0;
  bool passed = false;
  std::string error;  // set if the check threw
};

struct GradSuiteReport {
  std::vector<GradCheckEntry> entries;
  bool passed() const;
};

/// Every op and block at a tiny fixed shape, plus sampled full-network checks.
std::vector<GradCheckItem> default_gradcheck_items();

/// Runs items whose name contains `filter` (all if empty).
GradSuiteReport run_gradcheck_suite(const std::vector<GradCheckItem>& items,
                                    const std::string& filter = "", std::uint64_t seed = 0);

void print_gradcheck_report(std::ostream& os, const GradSuiteReport& r);

}  // namespace translk
