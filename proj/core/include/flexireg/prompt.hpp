#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <memory>
#include <string>
#include <vector>

#include "flexireg/aggregate.hpp"
#include "flexireg/regions.hpp"

namespace flexireg {

// --- text-region alignment ---

struct TRAlignParams {
  Eigen::MatrixXd Wq;              // d x d
  Eigen::MatrixXd Wk, Wv;          // d_llm x d_llm
  Eigen::MatrixXd mlp_W1, mlp_b1;  // d -> d
  Eigen::MatrixXd mlp_W2, mlp_b2;  // d -> d_text
};

struct TRAlignOut {
  Eigen::MatrixXd output;      // n x d_text
  Eigen::MatrixXd similarity;  // M^t, d x d_llm, rows sum to 1
};

// M^t = softmax_dllm((H Wq)^T (H_text Wk));
// output = MLP((H_text Wv) M^t^T + H)
TRAlignOut t_r_align(const Eigen::MatrixXd& H, const Eigen::MatrixXd& H_text_raw,
                     const TRAlignParams& params, double slope = 0.01);

// Region-level text embeddings via the stage-2 aggregation (d_llm wide).
inline Eigen::MatrixXd aggregate_text_to_regions(const Eigen::MatrixXd& E_text,
                                                 const OverlapMap& overlap) {
  return aggregate_region_embeddings(E_text, overlap).H;
}

// --- street-view environment context ---

// Arithmetic mean of the rows (one row per image embedding).
Eigen::VectorXd env_context(const Eigen::MatrixXd& U);

// L^sv = -(1/m) sum_i sum_j log( exp(u_ij . v_i / tau)
//                                / sum_k exp(u_ij . v_k / tau) )
// U: per-cell image embedding matrices (k_i x dim); V: m x dim contexts.
double infonce_loss(const std::vector<Eigen::MatrixXd>& U, const Eigen::MatrixXd& V,
                    double tau);

// Trainable projection head over frozen street-view features.
struct SvEncoder {
  Eigen::MatrixXd W1, b1;  // 768 -> 768
  Eigen::MatrixXd W2, b2;  // 768 -> 768
  double leaky_slope = 0.01;
  Eigen::MatrixXd apply(const Eigen::MatrixXd& features) const;
};

void save_sv_encoder(const SvEncoder& enc, const std::string& path);
SvEncoder load_sv_encoder(const std::string& path);

struct SvEncoderConfig {
  int epochs = 100;
  double lr = 1e-3;
  double tau = 0.5;
  double leaky_slope = 0.01;
  std::uint64_t seed = 7;
};

struct SvTrainResult {
  SvEncoder encoder;
  std::vector<double> loss_curve;
  bool aborted = false;
};

// Minimizes the InfoNCE objective over all cells; deterministic per seed.
// cell_features: per cell, k_i x 768 frozen features (k_i >= 1).
SvTrainResult train_streetview_encoder(const std::vector<Eigen::MatrixXd>& cell_features,
                                       const SvEncoderConfig& cfg);

// Assigns each image to the region containing its location, then samples a
// fixed number x per region: without replacement when enough are available,
// with replacement otherwise. Image-less regions borrow uniformly from
// adjacent regions (falling back to the global pool if the neighborhood is
// also empty). Throws if there are no images at all.
std::vector<Eigen::MatrixXd> select_region_images(const RegionSet& regions,
                                                  const std::vector<Vec2>& locations,
                                                  const Eigen::MatrixXd& features,
                                                  int x, std::uint64_t seed);

// --- street view-region alignment ---

struct SVRAlignParams {
  Eigen::MatrixXd Wq;              // d x d_proj
  Eigen::MatrixXd Wk, Wv;          // 768 x d_proj
  Eigen::MatrixXd mlp_W1, mlp_b1;  // d_proj -> d_proj
  Eigen::MatrixXd mlp_W2, mlp_b2;  // d_proj -> d
};

struct SVRAlignOut {
  Eigen::VectorXd output;     // d
  Eigen::VectorXd attention;  // x, sums to 1
};

// h_sv = MLP(softmax(h Wq (U Wk)^T / sqrt(d_proj)) (U Wv))
SVRAlignOut sv_r_align(const Eigen::VectorXd& h, const Eigen::MatrixXd& U,
                       const SVRAlignParams& params, double slope = 0.01);

// h_hat = h || h_t || h_sv
Eigen::VectorXd final_embedding(const Eigen::VectorXd& h, const Eigen::VectorXd& h_t,
                                const Eigen::VectorXd& h_sv);

// --- the joint stage-3 trainer ---

enum class TextBranchMode {
  kAlign,      // T-RAlign (full model)
  kConcatRaw,  // raw region text embeddings concatenated, no alignment
  kOff,        // text excluded
};

enum class SvBranchMode {
  kAlign,      // SV-RAlign (full model)
  kSumConcat,  // sum of the region's image embeddings concatenated
  kOff,        // street view excluded
};

struct PromptConfig {
  int d = 144;
  int d_text = 144;
  int d_proj = 256;
  int head_hidden = 256;
  int epochs = 1000;
  double lr = 5e-4;
  double weight_decay = 5e-4;
  double leaky_slope = 0.01;
  std::uint64_t seed = 7;
  TextBranchMode text_mode = TextBranchMode::kAlign;
  SvBranchMode sv_mode = SvBranchMode::kAlign;
};

struct PromptInputs {
  Eigen::MatrixXd H;                           // n x d
  Eigen::MatrixXd H_text_raw;                  // n x d_llm (empty if text off)
  std::vector<Eigen::MatrixXd> region_images;  // n of x x 768 (empty if sv off)
  Eigen::VectorXd targets;                     // n; non-train rows may be NaN
  std::vector<Eigen::Index> train_idx;         // rows the loss may touch
};

struct PromptResult {
  Eigen::MatrixXd enhanced;     // n x (parts), H-hat
  Eigen::VectorXd predictions;  // n
  std::vector<double> loss_curve;
  bool aborted = false;
  int epochs_run = 0;
};

class PromptEnhancer {
 public:
  PromptEnhancer(PromptInputs inputs, PromptConfig cfg);
  ~PromptEnhancer();

  PromptResult train();
  Eigen::MatrixXd enhanced();       // eval forward with current params
  Eigen::Index enhanced_dim() const;

 private:
  friend struct PromptEnhancerTestAccess;
  struct Impl;
  std::unique_ptr<Impl> impl_;
};

// White-box hook for gradient verification: evaluates the deterministic
// training loss and optionally returns analytic gradients aligned with the
// internal parameter list; `parameters` exposes the values for finite
// differencing.
struct PromptEnhancerTestAccess {
  static double loss_and_grads(PromptEnhancer& enhancer,
                               std::vector<Eigen::MatrixXd>* grads);
  static std::vector<Eigen::MatrixXd*> parameters(PromptEnhancer& enhancer);
  // Runs one forward pass and returns the worst |row sum - 1| over
  // every attention map in the graph.
  static double max_softmax_row_error(PromptEnhancer& enhancer);
};

}  // namespace flexireg
