#include "flexireg/prompt.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <stdexcept>

#include "flexireg/autodiff.hpp"
#include "flexireg/io.hpp"
#include "flexireg/rng.hpp"

namespace flexireg {

using ad::Matrix;
using ad::Param;
using ad::Tape;
using ad::Var;

namespace {

Matrix random_matrix(Rng& rng, Eigen::Index rows, Eigen::Index cols, double scale) {
  Matrix m(rows, cols);
  for (Eigen::Index i = 0; i < rows; ++i)
    for (Eigen::Index j = 0; j < cols; ++j) m(i, j) = scale * rng.normal();
  return m;
}

Eigen::MatrixXd softmax_rows_plain(const Eigen::MatrixXd& x) {
  Eigen::MatrixXd out(x.rows(), x.cols());
  for (Eigen::Index i = 0; i < x.rows(); ++i) {
    const double mx = x.row(i).maxCoeff();
    Eigen::ArrayXd e = (x.row(i).array() - mx).exp();
    out.row(i) = (e / e.sum()).matrix();
  }
  return out;
}

Eigen::MatrixXd leaky_plain(const Eigen::MatrixXd& x, double slope) {
  return x.unaryExpr([slope](double v) { return v > 0.0 ? v : slope * v; });
}

}  // namespace

TRAlignOut t_r_align(const Eigen::MatrixXd& H, const Eigen::MatrixXd& H_text_raw,
                     const TRAlignParams& p, double slope) {
  const Eigen::Index n = H.rows(), d = H.cols(), dllm = H_text_raw.cols();
  if (H_text_raw.rows() != n)
    throw std::invalid_argument("t_r_align: row mismatch between H and H_text_raw");
  if (p.Wq.rows() != d || p.Wq.cols() != d || p.Wk.rows() != dllm ||
      p.Wk.cols() != dllm || p.Wv.rows() != dllm || p.Wv.cols() != dllm)
    throw std::invalid_argument("t_r_align: parameter shape mismatch");
  if (p.mlp_W1.rows() != d || p.mlp_W2.rows() != p.mlp_W1.cols())
    throw std::invalid_argument("t_r_align: MLP shape mismatch");

  TRAlignOut out;
  const Eigen::MatrixXd Q = H * p.Wq;            // n x d
  const Eigen::MatrixXd K = H_text_raw * p.Wk;   // n x dllm
  out.similarity = softmax_rows_plain(Q.transpose() * K);  // d x dllm
  const Eigen::MatrixXd V = H_text_raw * p.Wv;   // n x dllm
  const Eigen::MatrixXd mixed = V * out.similarity.transpose() + H;  // n x d
  const Eigen::MatrixXd hidden =
      leaky_plain((mixed * p.mlp_W1).rowwise() + p.mlp_b1.row(0), slope);
  out.output = (hidden * p.mlp_W2).rowwise() + p.mlp_b2.row(0);
  return out;
}

Eigen::VectorXd env_context(const Eigen::MatrixXd& U) {
  if (U.rows() == 0) throw std::invalid_argument("env_context: no image embeddings");
  return U.colwise().mean().transpose();
}

double infonce_loss(const std::vector<Eigen::MatrixXd>& U, const Eigen::MatrixXd& V,
                    double tau) {
  const auto m = static_cast<Eigen::Index>(U.size());
  if (m < 2) throw std::invalid_argument("infonce_loss: need at least 2 cells");
  if (V.rows() != m) throw std::invalid_argument("infonce_loss: context count mismatch");
  if (tau <= 0.0) throw std::invalid_argument("infonce_loss: tau must be positive");
  double total = 0.0;
  for (Eigen::Index i = 0; i < m; ++i) {
    const auto& Ui = U[static_cast<std::size_t>(i)];
    if (Ui.rows() == 0)
      throw std::invalid_argument("infonce_loss: cell with no image embeddings");
    if (Ui.cols() != V.cols())
      throw std::invalid_argument("infonce_loss: embedding width mismatch");
    for (Eigen::Index j = 0; j < Ui.rows(); ++j) {
      Eigen::VectorXd logits = (V * Ui.row(j).transpose()) / tau;  // m
      const double mx = logits.maxCoeff();
      const double lse = mx + std::log((logits.array() - mx).exp().sum());
      total += lse - logits(i);
    }
  }
  return total / static_cast<double>(m);
}

Eigen::MatrixXd SvEncoder::apply(const Eigen::MatrixXd& features) const {
  const Eigen::MatrixXd hidden =
      leaky_plain((features * W1).rowwise() + b1.row(0), leaky_slope);
  return (hidden * W2).rowwise() + b2.row(0);
}

void save_sv_encoder(const SvEncoder& enc, const std::string& path) {
  const Eigen::Index dim = enc.W1.rows();
  Eigen::MatrixXd stacked(2 * dim + 2, enc.W1.cols());
  stacked.topRows(dim) = enc.W1;
  stacked.row(dim) = enc.b1.row(0);
  stacked.middleRows(dim + 1, dim) = enc.W2;
  stacked.row(2 * dim + 1) = enc.b2.row(0);
  std::vector<std::int64_t> ids(static_cast<std::size_t>(stacked.rows()));
  for (std::size_t i = 0; i < ids.size(); ++i) ids[i] = static_cast<std::int64_t>(i);
  write_embedding_file(path, stacked, ids);
}

SvEncoder load_sv_encoder(const std::string& path) {
  const Eigen::MatrixXd stacked = read_embedding_file(path);
  if (stacked.rows() < 4 || (stacked.rows() - 2) % 2 != 0)
    throw std::runtime_error("load_sv_encoder: unexpected shape in " + path);
  const Eigen::Index dim = (stacked.rows() - 2) / 2;
  SvEncoder enc;
  enc.W1 = stacked.topRows(dim);
  enc.b1 = stacked.row(dim);
  enc.W2 = stacked.middleRows(dim + 1, dim);
  enc.b2 = stacked.row(2 * dim + 1);
  return enc;
}

SvTrainResult train_streetview_encoder(const std::vector<Eigen::MatrixXd>& cell_features,
                                       const SvEncoderConfig& cfg) {
  const auto m = static_cast<Eigen::Index>(cell_features.size());
  if (m < 2)
    throw std::invalid_argument("train_streetview_encoder: need at least 2 cells");
  Eigen::Index total = 0;
  const Eigen::Index dim = cell_features[0].cols();
  for (const auto& f : cell_features) {
    if (f.rows() == 0)
      throw std::invalid_argument("train_streetview_encoder: cell with no images");
    if (f.cols() != dim)
      throw std::invalid_argument("train_streetview_encoder: feature width mismatch");
    total += f.rows();
  }

  Eigen::MatrixXd X(total, dim);
  Eigen::MatrixXd S = Eigen::MatrixXd::Zero(m, total);     // per-cell averaging
  Eigen::MatrixXd own = Eigen::MatrixXd::Zero(total, m);   // one-hot positives
  Eigen::Index row = 0;
  for (Eigen::Index i = 0; i < m; ++i) {
    const auto& f = cell_features[static_cast<std::size_t>(i)];
    X.middleRows(row, f.rows()) = f;
    for (Eigen::Index j = 0; j < f.rows(); ++j) {
      S(i, row + j) = 1.0 / static_cast<double>(f.rows());
      own(row + j, i) = 1.0;
    }
    row += f.rows();
  }

  Rng init_rng = Rng::substream(cfg.seed, "sv-init");
  const double scale = 1.0 / std::sqrt(static_cast<double>(dim));
  Param W1(random_matrix(init_rng, dim, dim, scale));
  Param b1(Matrix::Zero(1, dim));
  Param W2(random_matrix(init_rng, dim, dim, scale));
  Param b2(Matrix::Zero(1, dim));
  std::vector<Param*> params{&W1, &b1, &W2, &b2};

  SvTrainResult result;
  ad::Adam opt(cfg.lr);
  std::vector<Matrix> snapshot;
  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    Tape t;
    Var Xc = t.input(X);
    Var W1v = t.input(W1.value, true), b1v = t.input(b1.value, true);
    Var W2v = t.input(W2.value, true), b2v = t.input(b2.value, true);
    Var hidden = t.leaky_relu(t.add_row_broadcast(t.matmul(Xc, W1v), b1v),
                              cfg.leaky_slope);
    Var U = t.add_row_broadcast(t.matmul(hidden, W2v), b2v);
    Var V = t.matmul(t.input(S), U);
    Var logits = t.scale(t.matmul(U, V, false, true), 1.0 / cfg.tau);
    Var pos = t.rowwise_sum(t.cmul(logits, t.input(own)));
    Var loss = t.scale(t.sum_all(t.sub(t.logsumexp_rows(logits), pos)),
                       1.0 / static_cast<double>(m));

    const double value = t.value(loss)(0, 0);
    if (!std::isfinite(value)) {
      if (!snapshot.empty())
        for (std::size_t i = 0; i < params.size(); ++i) params[i]->value = snapshot[i];
      result.aborted = true;
      break;
    }
    result.loss_curve.push_back(value);
    t.backward(loss);
    snapshot.clear();
    for (Param* p : params) snapshot.push_back(p->value);
    opt.step({{&W1, &t.grad(W1v)},
              {&b1, &t.grad(b1v)},
              {&W2, &t.grad(W2v)},
              {&b2, &t.grad(b2v)}});
  }
  result.encoder.W1 = W1.value;
  result.encoder.b1 = b1.value;
  result.encoder.W2 = W2.value;
  result.encoder.b2 = b2.value;
  result.encoder.leaky_slope = cfg.leaky_slope;
  return result;
}

std::vector<Eigen::MatrixXd> select_region_images(const RegionSet& regions,
                                                  const std::vector<Vec2>& locations,
                                                  const Eigen::MatrixXd& features,
                                                  int x, std::uint64_t seed) {
  if (static_cast<Eigen::Index>(locations.size()) != features.rows())
    throw std::invalid_argument("select_region_images: location/feature mismatch");
  if (x < 1) throw std::invalid_argument("select_region_images: x must be >= 1");
  if (features.rows() == 0)
    throw std::runtime_error("select_region_images: no images available");

  auto contains = [](const Region& r, const Vec2& p) {
    for (const auto& part : r.parts) {
      if (!point_in_ring(p, part.outer)) continue;
      bool in_hole = false;
      for (const Ring& h : part.holes)
        if (point_in_ring(p, h)) {
          in_hole = true;
          break;
        }
      if (!in_hole) return true;
    }
    return false;
  };

  std::vector<std::vector<Eigen::Index>> assigned(regions.size());
  std::vector<Eigen::Index> all;
  for (Eigen::Index img = 0; img < features.rows(); ++img) {
    all.push_back(img);
    for (std::size_t r = 0; r < regions.size(); ++r)
      if (contains(regions[r], locations[static_cast<std::size_t>(img)])) {
        assigned[r].push_back(img);
        break;
      }
  }

  const auto adjacency = region_adjacency(regions);
  Rng rng = Rng::substream(seed, "region-image-selection");
  std::vector<Eigen::MatrixXd> out(regions.size());
  for (std::size_t r = 0; r < regions.size(); ++r) {
    std::vector<Eigen::Index> pool = assigned[r];
    if (pool.empty()) {
      for (std::size_t nb : adjacency[r])
        pool.insert(pool.end(), assigned[nb].begin(), assigned[nb].end());
    }
    if (pool.empty()) pool = all;  // isolated empty neighborhood
    Eigen::MatrixXd U(x, features.cols());
    if (static_cast<int>(pool.size()) >= x) {
      const auto picks = rng.sample_without_replacement(pool.size(), static_cast<std::size_t>(x));
      for (int k = 0; k < x; ++k)
        U.row(k) = features.row(pool[picks[static_cast<std::size_t>(k)]]);
    } else {
      for (int k = 0; k < x; ++k)
        U.row(k) = features.row(
            pool[static_cast<std::size_t>(rng.uniform_index(pool.size()))]);
    }
    out[r] = std::move(U);
  }
  return out;
}

SVRAlignOut sv_r_align(const Eigen::VectorXd& h, const Eigen::MatrixXd& U,
                       const SVRAlignParams& p, double slope) {
  if (p.Wq.rows() != h.size())
    throw std::invalid_argument("sv_r_align: h/Wq shape mismatch");
  if (p.Wk.rows() != U.cols() || p.Wv.rows() != U.cols())
    throw std::invalid_argument("sv_r_align: U/Wk shape mismatch");
  const Eigen::Index dproj = p.Wq.cols();
  const Eigen::RowVectorXd Q = h.transpose() * p.Wq;  // 1 x dproj
  const Eigen::MatrixXd K = U * p.Wk;                 // x x dproj
  const Eigen::MatrixXd V = U * p.Wv;
  SVRAlignOut out;
  out.attention =
      softmax_rows_plain(Q * K.transpose() / std::sqrt(static_cast<double>(dproj)))
          .row(0)
          .transpose();
  const Eigen::RowVectorXd ctx = out.attention.transpose() * V;  // 1 x dproj
  const Eigen::RowVectorXd hidden =
      leaky_plain(ctx * p.mlp_W1 + p.mlp_b1.row(0), slope);
  out.output = (hidden * p.mlp_W2 + p.mlp_b2.row(0)).transpose();
  return out;
}

Eigen::VectorXd final_embedding(const Eigen::VectorXd& h, const Eigen::VectorXd& h_t,
                                const Eigen::VectorXd& h_sv) {
  Eigen::VectorXd out(h.size() + h_t.size() + h_sv.size());
  out << h, h_t, h_sv;
  return out;
}

// --- PromptEnhancer ---

struct PromptEnhancer::Impl {
  PromptInputs in;
  PromptConfig cfg;
  Eigen::Index n = 0, dllm = 0, sv_dim = 0, images_per_region = 0;

  struct Lin {
    Param W, b;
    Lin(Rng& rng, Eigen::Index i, Eigen::Index o)
        : W(random_matrix(rng, i, o, 1.0 / std::sqrt(static_cast<double>(i)))),
          b(Matrix::Zero(1, o)) {}
  };

  // text branch
  std::unique_ptr<Param> t_Wq, t_Wk, t_Wv;
  std::unique_ptr<Lin> t_mlp1, t_mlp2;
  // street-view branch
  std::unique_ptr<Param> s_Wq, s_Wk, s_Wv;
  std::unique_ptr<Lin> s_mlp1, s_mlp2;
  // task head
  std::unique_ptr<Lin> head1, head2;

  Eigen::MatrixXd images_stacked;  // (n * x) x sv_dim
  Eigen::MatrixXd sv_sums;         // n x sv_dim (kSumConcat)
  Eigen::VectorXd train_targets;

  Impl(PromptInputs inputs, PromptConfig config)
      : in(std::move(inputs)), cfg(config) {
    n = in.H.rows();
    if (n == 0 || in.H.cols() != cfg.d)
      throw std::invalid_argument("PromptEnhancer: H must be n x d");
    if (in.targets.size() != n)
      throw std::invalid_argument("PromptEnhancer: target size mismatch");
    if (in.train_idx.empty())
      throw std::invalid_argument("PromptEnhancer: empty train index set");
    for (Eigen::Index i : in.train_idx) {
      if (i < 0 || i >= n)
        throw std::invalid_argument("PromptEnhancer: train index out of range");
      if (!std::isfinite(in.targets(i)))
        throw std::invalid_argument("PromptEnhancer: non-finite train target");
    }
    if (cfg.text_mode != TextBranchMode::kOff) {
      if (in.H_text_raw.rows() != n)
        throw std::invalid_argument("PromptEnhancer: H_text_raw row mismatch");
      dllm = in.H_text_raw.cols();
    }
    if (cfg.sv_mode != SvBranchMode::kOff) {
      if (static_cast<Eigen::Index>(in.region_images.size()) != n)
        throw std::invalid_argument("PromptEnhancer: region image count mismatch");
      images_per_region = in.region_images[0].rows();
      sv_dim = in.region_images[0].cols();
      for (const auto& U : in.region_images)
        if (U.rows() != images_per_region || U.cols() != sv_dim)
          throw std::invalid_argument("PromptEnhancer: ragged region image sets");
    }

    Rng rng = Rng::substream(cfg.seed, "prompt-init");
    const double ds = 1.0 / std::sqrt(static_cast<double>(cfg.d));
    if (cfg.text_mode == TextBranchMode::kAlign) {
      const double ts = 1.0 / std::sqrt(static_cast<double>(dllm));
      t_Wq = std::make_unique<Param>(random_matrix(rng, cfg.d, cfg.d, ds));
      t_Wk = std::make_unique<Param>(random_matrix(rng, dllm, dllm, ts));
      t_Wv = std::make_unique<Param>(random_matrix(rng, dllm, dllm, ts));
      t_mlp1 = std::make_unique<Lin>(rng, cfg.d, cfg.d);
      t_mlp2 = std::make_unique<Lin>(rng, cfg.d, cfg.d_text);
    }
    if (cfg.sv_mode == SvBranchMode::kAlign) {
      const double ss = 1.0 / std::sqrt(static_cast<double>(sv_dim));
      s_Wq = std::make_unique<Param>(random_matrix(rng, cfg.d, cfg.d_proj, ds));
      s_Wk = std::make_unique<Param>(random_matrix(rng, sv_dim, cfg.d_proj, ss));
      s_Wv = std::make_unique<Param>(random_matrix(rng, sv_dim, cfg.d_proj, ss));
      s_mlp1 = std::make_unique<Lin>(rng, cfg.d_proj, cfg.d_proj);
      s_mlp2 = std::make_unique<Lin>(rng, cfg.d_proj, cfg.d);
    }
    head1 = std::make_unique<Lin>(rng, enhanced_dim(), cfg.head_hidden);
    head2 = std::make_unique<Lin>(rng, cfg.head_hidden, 1);

    if (cfg.sv_mode == SvBranchMode::kAlign) {
      images_stacked.resize(n * images_per_region, sv_dim);
      for (Eigen::Index i = 0; i < n; ++i)
        images_stacked.middleRows(i * images_per_region, images_per_region) =
            in.region_images[static_cast<std::size_t>(i)];
    } else if (cfg.sv_mode == SvBranchMode::kSumConcat) {
      sv_sums = Eigen::MatrixXd::Zero(n, sv_dim);
      for (Eigen::Index i = 0; i < n; ++i)
        sv_sums.row(i) =
            in.region_images[static_cast<std::size_t>(i)].colwise().sum();
    }
    train_targets.resize(static_cast<Eigen::Index>(in.train_idx.size()));
    for (std::size_t k = 0; k < in.train_idx.size(); ++k)
      train_targets(static_cast<Eigen::Index>(k)) = in.targets(in.train_idx[k]);
  }

  Eigen::Index enhanced_dim() const {
    Eigen::Index dim = cfg.d;
    switch (cfg.text_mode) {
      case TextBranchMode::kAlign: dim += cfg.d_text; break;
      case TextBranchMode::kConcatRaw: dim += dllm; break;
      case TextBranchMode::kOff: break;
    }
    switch (cfg.sv_mode) {
      case SvBranchMode::kAlign: dim += cfg.d; break;
      case SvBranchMode::kSumConcat: dim += sv_dim; break;
      case SvBranchMode::kOff: break;
    }
    return dim;
  }

  std::vector<std::pair<Param*, Var>>* lifted_ = nullptr;
  Var lift(Tape& t, Param& p) {
    Var v = t.input(p.value, true);
    if (lifted_ != nullptr) lifted_->emplace_back(&p, v);
    return v;
  }
  Var linear(Tape& t, Lin& lin, Var x) {
    return t.add_row_broadcast(t.matmul(x, lift(t, lin.W)), lift(t, lin.b));
  }

  // attention-map audit trail used by the normalization checks
  std::vector<Var>* softmax_log_ = nullptr;
  Var softmax(Tape& t, Var x) {
    Var s = t.softmax_rows(x);
    if (softmax_log_ != nullptr) softmax_log_->push_back(s);
    return s;
  }

  struct Forward {
    Var enhanced;
    Var predictions;  // n x 1
    Var loss;         // train-subset MSE
  };

  Forward forward(Tape& t) {
    Var Hc = t.input(in.H);
    std::vector<Var> parts{Hc};

    if (cfg.text_mode == TextBranchMode::kAlign) {
      Var Ht = t.input(in.H_text_raw);
      Var Q = t.matmul(Hc, lift(t, *t_Wq));                       // n x d
      Var K = t.matmul(Ht, lift(t, *t_Wk));                       // n x dllm
      Var M = softmax(t, t.matmul(Q, K, true, false));            // d x dllm
      Var V = t.matmul(Ht, lift(t, *t_Wv));                       // n x dllm
      Var mixed = t.add(t.matmul(V, M, false, true), Hc);         // n x d
      Var hidden = t.leaky_relu(linear(t, *t_mlp1, mixed), cfg.leaky_slope);
      parts.push_back(linear(t, *t_mlp2, hidden));
    } else if (cfg.text_mode == TextBranchMode::kConcatRaw) {
      parts.push_back(t.input(in.H_text_raw));
    }

    if (cfg.sv_mode == SvBranchMode::kAlign) {
      Var Uc = t.input(images_stacked);
      Var Q = t.matmul(Hc, lift(t, *s_Wq));   // n x dproj
      Var K = t.matmul(Uc, lift(t, *s_Wk));   // (n*x) x dproj
      Var V = t.matmul(Uc, lift(t, *s_Wv));
      const double inv_sqrt = 1.0 / std::sqrt(static_cast<double>(cfg.d_proj));
      std::vector<Var> cols;
      for (Eigen::Index i = 0; i < n; ++i) {
        std::vector<Eigen::Index> rows(static_cast<std::size_t>(images_per_region));
        for (Eigen::Index k = 0; k < images_per_region; ++k)
          rows[static_cast<std::size_t>(k)] = i * images_per_region + k;
        Var Ki = t.gather_rows(K, rows);
        Var Vi = t.gather_rows(V, rows);
        Var qi = t.gather_rows(Q, {i});
        Var attn = softmax(t, t.scale(t.matmul(qi, Ki, false, true), inv_sqrt));
        cols.push_back(t.transpose(t.matmul(attn, Vi)));  // dproj x 1
      }
      Var ctx = t.transpose(t.concat_cols(cols));  // n x dproj
      Var hidden = t.leaky_relu(linear(t, *s_mlp1, ctx), cfg.leaky_slope);
      parts.push_back(linear(t, *s_mlp2, hidden));
    } else if (cfg.sv_mode == SvBranchMode::kSumConcat) {
      parts.push_back(t.input(sv_sums));
    }

    Forward f;
    f.enhanced = parts.size() == 1 ? parts[0] : t.concat_cols(parts);
    Var hidden = t.leaky_relu(linear(t, *head1, f.enhanced), cfg.leaky_slope);
    f.predictions = linear(t, *head2, hidden);
    Var pred_tr = t.gather_rows(f.predictions, in.train_idx);
    Var diff = t.sub(pred_tr, t.input(Matrix(train_targets)));
    f.loss = t.mean_all(t.cmul(diff, diff));
    return f;
  }

  std::vector<Param*> all_params() {
    std::vector<Param*> out;
    auto push = [&](Param* p) {
      if (p != nullptr) out.push_back(p);
    };
    auto push_lin = [&](Lin* l) {
      if (l != nullptr) {
        out.push_back(&l->W);
        out.push_back(&l->b);
      }
    };
    push(t_Wq.get());
    push(t_Wk.get());
    push(t_Wv.get());
    push_lin(t_mlp1.get());
    push_lin(t_mlp2.get());
    push(s_Wq.get());
    push(s_Wk.get());
    push(s_Wv.get());
    push_lin(s_mlp1.get());
    push_lin(s_mlp2.get());
    push_lin(head1.get());
    push_lin(head2.get());
    return out;
  }
};

PromptEnhancer::PromptEnhancer(PromptInputs inputs, PromptConfig cfg)
    : impl_(std::make_unique<Impl>(std::move(inputs), cfg)) {}

PromptEnhancer::~PromptEnhancer() = default;

Eigen::Index PromptEnhancer::enhanced_dim() const { return impl_->enhanced_dim(); }

PromptResult PromptEnhancer::train() {
  auto& im = *impl_;
  PromptResult result;
  ad::Adam opt(im.cfg.lr, im.cfg.weight_decay);
  auto params = im.all_params();
  std::vector<Matrix> snapshot;

  for (int epoch = 0; epoch < im.cfg.epochs; ++epoch) {
    Tape t;
    std::vector<std::pair<Param*, Var>> lifted;
    im.lifted_ = &lifted;
    Impl::Forward f = im.forward(t);
    im.lifted_ = nullptr;

    const double value = t.value(f.loss)(0, 0);
    if (!std::isfinite(value)) {
      if (!snapshot.empty())
        for (std::size_t i = 0; i < params.size(); ++i) params[i]->value = snapshot[i];
      result.aborted = true;
      break;
    }
    result.loss_curve.push_back(value);
    result.epochs_run = epoch + 1;

    t.backward(f.loss);
    if (epoch % 10 == 0) {  // periodic checkpoint for the abort path
      snapshot.clear();
      for (Param* p : params) snapshot.push_back(p->value);
    }
    std::vector<std::pair<Param*, const Matrix*>> updates;
    updates.reserve(lifted.size());
    for (auto& [p, v] : lifted) updates.emplace_back(p, &t.grad(v));
    opt.step(updates);
  }

  Tape t;
  im.lifted_ = nullptr;
  Impl::Forward f = im.forward(t);
  result.enhanced = t.value(f.enhanced);
  result.predictions = t.value(f.predictions).col(0);
  return result;
}

Eigen::MatrixXd PromptEnhancer::enhanced() {
  Tape t;
  Impl::Forward f = impl_->forward(t);
  return t.value(f.enhanced);
}

double PromptEnhancerTestAccess::max_softmax_row_error(PromptEnhancer& enhancer) {
  auto& im = *enhancer.impl_;
  Tape t;
  std::vector<Var> logged;
  im.softmax_log_ = &logged;
  im.forward(t);
  im.softmax_log_ = nullptr;
  double worst = 0.0;
  for (Var v : logged) {
    const Matrix& s = t.value(v);
    for (Eigen::Index i = 0; i < s.rows(); ++i)
      worst = std::max(worst, std::abs(s.row(i).sum() - 1.0));
  }
  if (logged.empty()) throw std::runtime_error("no attention maps recorded");
  return worst;
}

double PromptEnhancerTestAccess::loss_and_grads(PromptEnhancer& enhancer,
                                                std::vector<Eigen::MatrixXd>* grads) {
  auto& im = *enhancer.impl_;
  Tape t;
  std::vector<std::pair<Param*, Var>> lifted;
  im.lifted_ = &lifted;
  PromptEnhancer::Impl::Forward f = im.forward(t);
  im.lifted_ = nullptr;
  const double loss = t.value(f.loss)(0, 0);
  if (grads != nullptr) {
    t.backward(f.loss);
    std::map<Param*, Matrix> acc;
    for (auto& [p, v] : lifted) {
      auto [it, fresh] = acc.try_emplace(p, t.grad(v));
      if (!fresh) it->second += t.grad(v);
    }
    grads->clear();
    for (Param* p : im.all_params()) {
      auto it = acc.find(p);
      grads->push_back(it != acc.end()
                           ? it->second
                           : Matrix::Zero(p->value.rows(), p->value.cols()));
    }
  }
  return loss;
}

std::vector<Eigen::MatrixXd*> PromptEnhancerTestAccess::parameters(
    PromptEnhancer& enhancer) {
  std::vector<Eigen::MatrixXd*> out;
  for (Param* p : enhancer.impl_->all_params()) out.push_back(&p->value);
  return out;
}

}  // namespace flexireg
