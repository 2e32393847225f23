#include "flexireg/gridlearner.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <memory>
#include <stdexcept>
#include <unordered_set>

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

struct Linear {
  Param W;  // in x out
  Param b;  // 1 x out
  Linear(Rng& rng, Eigen::Index in, Eigen::Index out)
      : W(random_matrix(rng, in, out, 1.0 / std::sqrt(static_cast<double>(in)))),
        b(Matrix::Zero(1, out)) {}
  Var apply(Tape& t, Var x, Var w_var, Var b_var) const {
    return t.add_row_broadcast(t.matmul(x, w_var), b_var);
  }
};

struct GatLayerParams {
  Param W;  // d x d
  Param a;  // 1 x 3d
  Param w;  // d x 1
  GatLayerParams(Rng& rng, Eigen::Index d)
      : W(random_matrix(rng, d, d, 1.0 / std::sqrt(static_cast<double>(d)))),
        a(random_matrix(rng, 1, 3 * d, 1.0 / std::sqrt(static_cast<double>(d)))),
        w(random_matrix(rng, d, 1, 1.0 / std::sqrt(static_cast<double>(d)))) {}
};

struct FusionLayerParams {
  std::vector<Param> Wq, Wk, Wv;  // per head, d x d_head
  Param Wo;                       // d x d
  Param ln1_gain, ln1_bias, ln2_gain, ln2_bias;
  std::unique_ptr<Linear> mlp1, mlp2;
  FusionLayerParams(Rng& rng, Eigen::Index d, int heads)
      : Wo(random_matrix(rng, d, d, 1.0 / std::sqrt(static_cast<double>(d)))),
        ln1_gain(Matrix::Ones(1, d)),
        ln1_bias(Matrix::Zero(1, d)),
        ln2_gain(Matrix::Ones(1, d)),
        ln2_bias(Matrix::Zero(1, d)) {
    const Eigen::Index dh = d / heads;
    const double s = 1.0 / std::sqrt(static_cast<double>(d));
    for (int h = 0; h < heads; ++h) {
      Wq.emplace_back(random_matrix(rng, d, dh, s));
      Wk.emplace_back(random_matrix(rng, d, dh, s));
      Wv.emplace_back(random_matrix(rng, d, dh, s));
    }
    mlp1 = std::make_unique<Linear>(rng, d, d);
    mlp2 = std::make_unique<Linear>(rng, d, d);
  }
};

}  // namespace

struct GridLearner::Impl {
  GridLearnerInputs in;
  GridLearnerConfig cfg;
  Eigen::Index m = 0;

  // view branches; empty pointers for absent views
  std::map<std::string, std::unique_ptr<Param>> z0;                // p, l, gn
  std::map<std::string, std::vector<GatLayerParams>> gat;          // p, l, gn
  std::unique_ptr<Linear> sat_proj1, sat_proj2;                    // si
  // inter-view attention
  Param inter_Wq, inter_Wk, inter_Wv, inter_Wo;
  Param beta_theta;  // beta = sigmoid(theta)
  // view fusion
  Param fuse_W;  // d x d
  Param fuse_a;  // 1 x 2d
  std::vector<FusionLayerParams> cell_fusion;
  // per-view task heads and the count head
  std::map<std::string, std::unique_ptr<Linear>> head1, head2;
  std::unique_ptr<Linear> count1, count2;

  Eigen::MatrixXi neighbor_slots;  // m x 6 from adj_neighbor incidence
  Eigen::VectorXd poi_totals;      // m

  Impl(GridLearnerInputs inputs, GridLearnerConfig config, Rng& rng)
      : in(std::move(inputs)),
        cfg(config),
        inter_Wq(random_matrix(rng, config.d, config.d, 1.0 / std::sqrt(config.d))),
        inter_Wk(random_matrix(rng, config.d, config.d, 1.0 / std::sqrt(config.d))),
        inter_Wv(random_matrix(rng, config.d, config.d, 1.0 / std::sqrt(config.d))),
        inter_Wo(random_matrix(rng, config.d, config.d, 1.0 / std::sqrt(config.d))),
        beta_theta(Matrix::Zero(1, 1)),
        fuse_W(random_matrix(rng, config.d, config.d, 1.0 / std::sqrt(config.d))),
        fuse_a(random_matrix(rng, 1, 2 * config.d, 1.0 / std::sqrt(config.d))) {
    if (cfg.d % cfg.heads != 0)
      throw std::invalid_argument("GridLearner: d must be divisible by heads");
    if (in.views.empty()) throw std::invalid_argument("GridLearner: no views");

    for (const std::string& v : in.views) {
      const Eigen::MatrixXd* A = adjacency(v);
      if (v == "si") {
        if (in.sat_features.rows() == 0)
          throw std::invalid_argument("GridLearner: si view needs sat_features");
        if (m == 0) m = in.sat_features.rows();
      } else {
        if (A == nullptr) throw std::invalid_argument("GridLearner: unknown view " + v);
        if (A->rows() == 0 || A->rows() != A->cols())
          throw std::invalid_argument("GridLearner: bad adjacency for view " + v);
        if (m == 0) m = A->rows();
      }
    }
    for (const std::string& v : in.views) {
      const Eigen::MatrixXd* A = adjacency(v);
      if (A != nullptr && A->rows() != m)
        throw std::invalid_argument("GridLearner: inconsistent cell counts across views");
    }
    if (in.views.size() < 2)
      throw std::invalid_argument("GridLearner: need at least 2 views");

    for (const std::string& v : in.views) {
      if (v == "si") {
        sat_proj1 = std::make_unique<Linear>(rng, in.sat_features.cols(), cfg.d);
        sat_proj2 = std::make_unique<Linear>(rng, cfg.d, cfg.d);
        count1 = std::make_unique<Linear>(rng, cfg.d, cfg.d);
        count2 = std::make_unique<Linear>(rng, cfg.d, 1);
      } else {
        z0[v] = std::make_unique<Param>(
            random_matrix(rng, m, cfg.d, 1.0 / std::sqrt(cfg.d)));
        auto& layers = gat[v];
        for (int l = 0; l < cfg.gat_layers; ++l) layers.emplace_back(rng, cfg.d);
      }
      head1[v] = std::make_unique<Linear>(rng, cfg.d, cfg.d);
      head2[v] = std::make_unique<Linear>(rng, cfg.d, cfg.d);
    }
    for (int l = 0; l < cfg.fusion_layers; ++l)
      cell_fusion.emplace_back(rng, cfg.d, cfg.heads);

    if (has_view("si")) poi_totals = in.poi_counts.rowwise().sum();
    if (has_view("gn")) {
      if (in.neighbor_ids.rows() != m || in.neighbor_ids.cols() != 6)
        throw std::invalid_argument("GridLearner: gn view needs m x 6 neighbor_ids");
      neighbor_slots = in.neighbor_ids;
    }
  }

  bool has_view(const std::string& v) const {
    for (const auto& s : in.views)
      if (s == v) return true;
    return false;
  }

  const Eigen::MatrixXd* adjacency(const std::string& v) const {
    if (v == "p") return &in.adj_poi;
    if (v == "l") return &in.adj_landuse;
    if (v == "gn") return &in.adj_neighbor;
    if (v == "si") return nullptr;
    return nullptr;
  }

  struct Forward {
    Var fused;                        // m x d cell embeddings
    std::map<std::string, Var> head;  // per-view E^X
    Var count_pred;                   // m x 1 (si only)
    std::map<std::string, Var> loss;
    Var total_loss;
  };

  std::vector<std::pair<Param*, Var>>* lifted_ = nullptr;
  Var lift(Tape& t, Param& p) {
    Var v = t.input(p.value, true);
    if (lifted_ != nullptr) lifted_->emplace_back(&p, v);
    return v;
  }

  // attention-map audit trail used by the normalization checks
  std::vector<Var>* softmax_log_ = nullptr;
  Var softmax(Tape& t, Var x) {
    Var s = t.softmax_rows(x);
    if (softmax_log_ != nullptr) softmax_log_->push_back(s);
    return s;
  }

  Var gat_stack(Tape& t, const std::string& view, Var A_const) {
    Var Z = lift(t, *z0.at(view));
    for (auto& layer : gat.at(view)) {
      Var W = lift(t, layer.W);
      Var a = lift(t, layer.a);
      Var w = lift(t, layer.w);
      Var a1 = t.slice_cols(a, 0, cfg.d);
      Var a2 = t.slice_cols(a, cfg.d, cfg.d);
      Var a3 = t.slice_cols(a, 2 * cfg.d, cfg.d);
      Var ZW = t.matmul(Z, W, false, true);            // rows are W z_i
      Var s1 = t.matmul(ZW, a1, false, true);          // m x 1
      Var s2 = t.matmul(ZW, a2, false, true);          // m x 1
      Var c = t.matmul(a3, w);                         // 1 x 1
      Var logits = t.add_row_broadcast(
          t.add_col_broadcast(t.scale_by(A_const, c), s1), t.transpose(s2));
      Var alpha = softmax(t, t.leaky_relu(logits, cfg.leaky_slope));
      Z = t.leaky_relu(t.matmul(alpha, ZW), cfg.leaky_slope);
    }
    return Z;
  }

  Var apply_linear(Tape& t, Linear& lin, Var x) {
    return lin.apply(t, x, lift(t, lin.W), lift(t, lin.b));
  }

  std::vector<Var> inter_view(Tape& t, const std::vector<Var>& Zs) {
    const auto v = static_cast<Eigen::Index>(Zs.size());
    const Eigen::Index dh = cfg.d / cfg.heads;
    const double inv_sqrt_d = 1.0 / std::sqrt(static_cast<double>(cfg.d));
    Var Wq = lift(t, inter_Wq), Wk = lift(t, inter_Wk);
    Var Wv = lift(t, inter_Wv), Wo = lift(t, inter_Wo);
    std::vector<std::vector<Var>> per_view_heads(static_cast<std::size_t>(v));
    for (int h = 0; h < cfg.heads; ++h) {
      std::vector<Var> Q(static_cast<std::size_t>(v)), K(Q), V(Q);
      for (Eigen::Index k = 0; k < v; ++k) {
        Q[k] = t.slice_cols(t.matmul(Zs[k], Wq), h * dh, dh);
        K[k] = t.slice_cols(t.matmul(Zs[k], Wk), h * dh, dh);
        V[k] = t.slice_cols(t.matmul(Zs[k], Wv), h * dh, dh);
      }
      for (Eigen::Index k = 0; k < v; ++k) {
        std::vector<Var> scores(static_cast<std::size_t>(v));
        for (Eigen::Index j = 0; j < v; ++j)
          scores[j] = t.scale(t.sum_all(t.cmul(Q[k], K[j])), inv_sqrt_d);
        Var alpha = softmax(t, t.concat_cols(scores));  // 1 x v
        Var mixed;
        for (Eigen::Index j = 0; j < v; ++j) {
          Var term = t.scale_by(V[j], t.slice_cols(alpha, j, 1));
          mixed = (j == 0) ? term : t.add(mixed, term);
        }
        per_view_heads[static_cast<std::size_t>(k)].push_back(mixed);
      }
    }
    std::vector<Var> out(static_cast<std::size_t>(v));
    for (Eigen::Index k = 0; k < v; ++k)
      out[k] = t.matmul(t.concat_cols(per_view_heads[static_cast<std::size_t>(k)]), Wo);
    return out;
  }

  Var view_fuse(Tape& t, const std::vector<Var>& Zs) {
    const auto v = static_cast<Eigen::Index>(Zs.size());
    Var W = lift(t, fuse_W);
    Var a = lift(t, fuse_a);
    Var a1 = t.slice_cols(a, 0, cfg.d);
    Var a2 = t.slice_cols(a, cfg.d, cfg.d);
    std::vector<Var> u(static_cast<std::size_t>(v)), w(u);
    for (Eigen::Index k = 0; k < v; ++k) {
      Var ZW = t.matmul(Zs[k], W, false, true);
      u[k] = t.matmul(ZW, a1, false, true);  // m x 1
      w[k] = t.matmul(ZW, a2, false, true);  // m x 1
    }
    std::vector<Var> s(static_cast<std::size_t>(v));
    for (Eigen::Index k = 0; k < v; ++k) {
      Var acc;
      for (Eigen::Index j = 0; j < v; ++j) {
        Var pair_score = t.mean_all(t.leaky_relu(t.add(u[k], w[j]), cfg.leaky_slope));
        acc = (j == 0) ? pair_score : t.add(acc, pair_score);
      }
      s[k] = acc;
    }
    Var alpha = softmax(t, t.concat_cols(s));  // 1 x v
    Var fused;
    for (Eigen::Index k = 0; k < v; ++k) {
      Var term = t.scale_by(Zs[k], t.slice_cols(alpha, k, 1));
      fused = (k == 0) ? term : t.add(fused, term);
    }
    return fused;
  }

  Matrix dropout_mask(Rng* rng, Eigen::Index rows, Eigen::Index cols) const {
    const double keep = 1.0 - cfg.dropout;
    Matrix mask = Matrix::Constant(rows, cols, 1.0);
    if (rng == nullptr || cfg.dropout <= 0.0) return mask;
    for (Eigen::Index i = 0; i < rows; ++i)
      for (Eigen::Index j = 0; j < cols; ++j)
        mask(i, j) = rng->uniform() < keep ? 1.0 / keep : 0.0;
    return mask;
  }

  Var cell_fuse(Tape& t, Var Z, Rng* dropout_rng) {
    const Eigen::Index dh = cfg.d / cfg.heads;
    const double inv_sqrt_d = 1.0 / std::sqrt(static_cast<double>(cfg.d));
    for (auto& layer : cell_fusion) {
      std::vector<Var> heads;
      for (int h = 0; h < cfg.heads; ++h) {
        Var Q = t.matmul(Z, lift(t, layer.Wq[static_cast<std::size_t>(h)]));
        Var K = t.matmul(Z, lift(t, layer.Wk[static_cast<std::size_t>(h)]));
        Var V = t.matmul(Z, lift(t, layer.Wv[static_cast<std::size_t>(h)]));
        Var attn = softmax(t, t.scale(t.matmul(Q, K, false, true), inv_sqrt_d));
        heads.push_back(t.matmul(attn, V));
        (void)dh;
      }
      Var attn_out = t.matmul(t.concat_cols(heads), lift(t, layer.Wo));
      attn_out = t.dropout(attn_out, dropout_mask(dropout_rng, m, cfg.d));
      Var z1 = t.layernorm_rows(t.add(Z, attn_out), lift(t, layer.ln1_gain),
                                lift(t, layer.ln1_bias));
      Var hidden = t.leaky_relu(apply_linear(t, *layer.mlp1, z1), cfg.leaky_slope);
      Var mlp_out = apply_linear(t, *layer.mlp2, hidden);
      mlp_out = t.dropout(mlp_out, dropout_mask(dropout_rng, m, cfg.d));
      Z = t.layernorm_rows(t.add(z1, mlp_out), lift(t, layer.ln2_gain),
                           lift(t, layer.ln2_bias));
    }
    return Z;
  }

  Forward forward(Tape& t, bool training, Rng* dropout_rng,
                  const std::vector<Eigen::Index>* pos,
                  const std::vector<Eigen::Index>* neg) {
    Forward f;
    std::vector<Var> intra;
    std::vector<std::string> order;
    std::map<std::string, Var> adj_vars;
    for (const std::string& v : in.views) {
      order.push_back(v);
      if (v == "si") {
        Var sat = t.input(in.sat_features, false);
        Var hidden = t.leaky_relu(apply_linear(t, *sat_proj1, sat), cfg.leaky_slope);
        intra.push_back(apply_linear(t, *sat_proj2, hidden));
      } else {
        Var A = t.input(*adjacency(v), false);
        adj_vars[v] = A;
        intra.push_back(gat_stack(t, v, A));
      }
    }

    std::vector<Var> inter = inter_view(t, intra);

    Var beta = t.sigmoid(lift(t, beta_theta));
    Var one_minus = t.sub(t.constant(1.0), beta);
    std::vector<Var> combined(intra.size());
    for (std::size_t k = 0; k < intra.size(); ++k)
      combined[k] = t.add(t.scale_by(intra[k], beta), t.scale_by(inter[k], one_minus));

    Var fused = view_fuse(t, combined);
    f.fused = cell_fuse(t, fused, training ? dropout_rng : nullptr);

    for (const std::string& v : order) {
      Var hidden = t.leaky_relu(apply_linear(t, *head1.at(v), f.fused), cfg.leaky_slope);
      f.head[v] = apply_linear(t, *head2.at(v), hidden);
    }

    Var total;
    bool first = true;
    auto add_loss = [&](const std::string& name, Var l) {
      f.loss[name] = l;
      total = first ? l : t.add(total, l);
      first = false;
    };
    for (const std::string& v : order) {
      if (v == "p" || v == "l") {
        Var G = t.matmul(f.head[v], f.head[v], false, true);
        add_loss(v, t.mean_all(t.abs(t.sub(adj_vars.at(v), G))));
      } else if (v == "gn") {
        if (pos == nullptr || neg == nullptr) continue;
        Var E = f.head[v];
        Var eps = t.input(Matrix::Constant(m, 1, 1e-12), false);
        Var dp_sq = t.rowwise_sum(
            t.cmul(t.sub(E, t.gather_rows(E, *pos)), t.sub(E, t.gather_rows(E, *pos))));
        Var dn_sq = t.rowwise_sum(
            t.cmul(t.sub(E, t.gather_rows(E, *neg)), t.sub(E, t.gather_rows(E, *neg))));
        Var dp = t.sqrt(t.add(dp_sq, eps));
        Var dn = t.sqrt(t.add(dn_sq, eps));
        Var margin = t.input(Matrix::Constant(m, 1, cfg.margin), false);
        add_loss(v, t.mean_all(t.relu(t.add(t.sub(dp, dn), margin))));
      } else if (v == "si") {
        Var hidden =
            t.leaky_relu(apply_linear(t, *count1, f.head[v]), cfg.leaky_slope);
        f.count_pred = apply_linear(t, *count2, hidden);
        add_loss(v, t.smooth_l1_mean(f.count_pred, poi_totals, cfg.smooth_l1_beta));
      }
    }
    f.total_loss = total;
    return f;
  }

  std::vector<Param*> all_params() {
    std::vector<Param*> out;
    auto push_linear = [&](Linear* lin) {
      if (lin != nullptr) {
        out.push_back(&lin->W);
        out.push_back(&lin->b);
      }
    };
    for (auto& [v, p] : z0) out.push_back(p.get());
    for (auto& [v, layers] : gat)
      for (auto& l : layers) {
        out.push_back(&l.W);
        out.push_back(&l.a);
        out.push_back(&l.w);
      }
    push_linear(sat_proj1.get());
    push_linear(sat_proj2.get());
    out.push_back(&inter_Wq);
    out.push_back(&inter_Wk);
    out.push_back(&inter_Wv);
    out.push_back(&inter_Wo);
    out.push_back(&beta_theta);
    out.push_back(&fuse_W);
    out.push_back(&fuse_a);
    for (auto& layer : cell_fusion) {
      for (auto& p : layer.Wq) out.push_back(&p);
      for (auto& p : layer.Wk) out.push_back(&p);
      for (auto& p : layer.Wv) out.push_back(&p);
      out.push_back(&layer.Wo);
      out.push_back(&layer.ln1_gain);
      out.push_back(&layer.ln1_bias);
      out.push_back(&layer.ln2_gain);
      out.push_back(&layer.ln2_bias);
      push_linear(layer.mlp1.get());
      push_linear(layer.mlp2.get());
    }
    for (auto& [v, lin] : head1) push_linear(lin.get());
    for (auto& [v, lin] : head2) push_linear(lin.get());
    push_linear(count1.get());
    push_linear(count2.get());
    return out;
  }
};

GridLearner::GridLearner(GridLearnerInputs inputs, GridLearnerConfig cfg) {
  Rng init_rng = Rng::substream(cfg.seed, "grid-init");
  impl_ = std::make_unique<Impl>(std::move(inputs), cfg, init_rng);
}

GridLearner::~GridLearner() = default;

std::vector<Param*> GridLearner::parameters() { return impl_->all_params(); }

GridTrainResult GridLearner::train() {
  auto& im = *impl_;
  GridTrainResult result;
  ad::Adam opt(im.cfg.lr);
  Rng dropout_rng = Rng::substream(im.cfg.seed, "grid-dropout");
  const bool use_gn = im.has_view("gn");
  std::vector<Eigen::Index> pos, neg;

  std::vector<Matrix> snapshot;
  auto params = im.all_params();

  for (int epoch = 0; epoch < im.cfg.epochs; ++epoch) {
    if (use_gn)
      sample_triplets(im.neighbor_slots, im.m, im.cfg.seed,
                      static_cast<std::uint64_t>(epoch), pos, neg);

    Tape t;
    std::vector<std::pair<Param*, Var>> lifted;
    im.lifted_ = &lifted;
    Impl::Forward f = im.forward(t, true, &dropout_rng, use_gn ? &pos : nullptr,
                                 use_gn ? &neg : nullptr);
    im.lifted_ = nullptr;

    std::array<double, 5> row{0, 0, 0, 0, 0};
    auto get = [&](const std::string& v) {
      auto it = f.loss.find(v);
      return it == f.loss.end() ? 0.0 : t.value(it->second)(0, 0);
    };
    row[0] = get("p");
    row[1] = get("l");
    row[2] = get("gn");
    row[3] = get("si");
    row[4] = t.value(f.total_loss)(0, 0);
    if (!std::isfinite(row[4])) {
      // roll back to the last checkpoint and stop
      if (!snapshot.empty())
        for (std::size_t i = 0; i < params.size(); ++i) params[i]->value = snapshot[i];
      result.aborted = true;
      break;
    }
    result.loss_curve.push_back(row);
    result.epochs_run = epoch + 1;

    t.backward(f.total_loss);
    if (epoch % 10 == 0) {  // periodic checkpoint for the abort path
      snapshot.clear();
      for (Param* p : params) snapshot.push_back(p->value);
    }
    std::vector<std::pair<Param*, const Matrix*>> updates;
    updates.reserve(lifted.size());
    for (auto& [p, v] : lifted) updates.emplace_back(p, &t.grad(v));
    opt.step(updates);
  }
  result.embeddings = embeddings();
  return result;
}

Eigen::MatrixXd GridLearner::embeddings() {
  Tape t;
  Impl::Forward f = impl_->forward(t, false, nullptr, nullptr, nullptr);
  return t.value(f.fused);
}

Eigen::MatrixXd GridLearner::view_head(const std::string& view) {
  if (!impl_->has_view(view))
    throw std::invalid_argument("GridLearner::view_head: inactive view " + view);
  Tape t;
  Impl::Forward f = impl_->forward(t, false, nullptr, nullptr, nullptr);
  return t.value(f.head.at(view));
}

double GridLearnerTestAccess::max_softmax_row_error(GridLearner& learner) {
  auto& im = *learner.impl_;
  Tape t;
  std::vector<Var> logged;
  im.softmax_log_ = &logged;
  im.forward(t, false, nullptr, nullptr, nullptr);
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

double GridLearnerTestAccess::loss_and_grads(GridLearner& learner,
                                             std::vector<Eigen::MatrixXd>* grads) {
  auto& im = *learner.impl_;
  const bool use_gn = im.has_view("gn");
  std::vector<Eigen::Index> pos, neg;
  if (use_gn) sample_triplets(im.neighbor_slots, im.m, im.cfg.seed, 0, pos, neg);

  Tape t;
  std::vector<std::pair<Param*, Var>> lifted;
  im.lifted_ = &lifted;
  GridLearner::Impl::Forward f = im.forward(t, false, nullptr,
                                            use_gn ? &pos : nullptr,
                                            use_gn ? &neg : nullptr);
  im.lifted_ = nullptr;
  const double loss = t.value(f.total_loss)(0, 0);
  if (grads != nullptr) {
    t.backward(f.total_loss);
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

// --- standalone pieces ---

GatLayerOut gat_layer(const Eigen::MatrixXd& Z, const Eigen::MatrixXd& A,
                      const Eigen::MatrixXd& W, const Eigen::VectorXd& a,
                      const Eigen::VectorXd& w, double slope) {
  const Eigen::Index d = W.rows();
  if (Z.cols() != d || A.rows() != Z.rows() || A.cols() != Z.rows() ||
      a.size() != 3 * d || w.size() != d)
    throw std::invalid_argument("gat_layer: inconsistent shapes");
  Tape t;
  Var Zv = t.input(Z), Av = t.input(A), Wv = t.input(W);
  Var av = t.input(a.transpose()), wv = t.input(w);
  Var a1 = t.slice_cols(av, 0, d), a2 = t.slice_cols(av, d, d),
      a3 = t.slice_cols(av, 2 * d, d);
  Var ZW = t.matmul(Zv, Wv, false, true);
  Var s1 = t.matmul(ZW, a1, false, true);
  Var s2 = t.matmul(ZW, a2, false, true);
  Var c = t.matmul(a3, wv);
  Var logits = t.add_row_broadcast(t.add_col_broadcast(t.scale_by(Av, c), s1),
                                   t.transpose(s2));
  Var alpha = t.softmax_rows(t.leaky_relu(logits, slope));
  Var out = t.leaky_relu(t.matmul(alpha, ZW), slope);
  return {t.value(alpha), t.value(out)};
}

InterViewOut inter_view_forward(const std::vector<Eigen::MatrixXd>& views,
                                const Eigen::MatrixXd& Wq, const Eigen::MatrixXd& Wk,
                                const Eigen::MatrixXd& Wv, const Eigen::MatrixXd& Wo,
                                int heads) {
  if (views.empty()) throw std::invalid_argument("inter_view_forward: no views");
  const Eigen::Index d = views[0].cols();
  if (d % heads != 0)
    throw std::invalid_argument("inter_view_forward: d not divisible by heads");
  const auto v = static_cast<Eigen::Index>(views.size());
  const Eigen::Index dh = d / heads;
  const double inv_sqrt_d = 1.0 / std::sqrt(static_cast<double>(d));

  InterViewOut out;
  Tape t;
  std::vector<Var> Zs;
  for (const auto& Z : views) Zs.push_back(t.input(Z));
  Var Wqv = t.input(Wq), Wkv = t.input(Wk), Wvv = t.input(Wv), Wov = t.input(Wo);
  std::vector<std::vector<Var>> per_view_heads(static_cast<std::size_t>(v));
  for (int h = 0; h < heads; ++h) {
    std::vector<Var> Q(static_cast<std::size_t>(v)), K(Q), V(Q);
    for (Eigen::Index k = 0; k < v; ++k) {
      Q[k] = t.slice_cols(t.matmul(Zs[k], Wqv), h * dh, dh);
      K[k] = t.slice_cols(t.matmul(Zs[k], Wkv), h * dh, dh);
      V[k] = t.slice_cols(t.matmul(Zs[k], Wvv), h * dh, dh);
    }
    Eigen::MatrixXd head_attn(v, v);
    for (Eigen::Index k = 0; k < v; ++k) {
      std::vector<Var> scores(static_cast<std::size_t>(v));
      for (Eigen::Index j = 0; j < v; ++j)
        scores[j] = t.scale(t.sum_all(t.cmul(Q[k], K[j])), inv_sqrt_d);
      Var alpha = t.softmax_rows(t.concat_cols(scores));
      head_attn.row(k) = t.value(alpha).row(0);
      Var mixed;
      for (Eigen::Index j = 0; j < v; ++j) {
        Var term = t.scale_by(V[j], t.slice_cols(alpha, j, 1));
        mixed = (j == 0) ? term : t.add(mixed, term);
      }
      per_view_heads[static_cast<std::size_t>(k)].push_back(mixed);
    }
    out.attention.push_back(std::move(head_attn));
  }
  for (Eigen::Index k = 0; k < v; ++k)
    out.outputs.push_back(t.value(
        t.matmul(t.concat_cols(per_view_heads[static_cast<std::size_t>(k)]), Wov)));
  return out;
}

std::vector<Eigen::MatrixXd> combine_views(const std::vector<Eigen::MatrixXd>& intra,
                                           const std::vector<Eigen::MatrixXd>& inter,
                                           double beta) {
  if (intra.size() != inter.size())
    throw std::invalid_argument("combine_views: view count mismatch");
  std::vector<Eigen::MatrixXd> out;
  out.reserve(intra.size());
  for (std::size_t k = 0; k < intra.size(); ++k)
    out.push_back(beta * intra[k] + (1.0 - beta) * inter[k]);
  return out;
}

ViewFusionOut view_fusion(const std::vector<Eigen::MatrixXd>& views,
                          const Eigen::MatrixXd& W, const Eigen::VectorXd& a,
                          double slope) {
  if (views.empty()) throw std::invalid_argument("view_fusion: no views");
  const Eigen::Index d = views[0].cols();
  if (a.size() != 2 * d) throw std::invalid_argument("view_fusion: bad a size");
  const auto v = static_cast<Eigen::Index>(views.size());
  Tape t;
  std::vector<Var> Zs;
  for (const auto& Z : views) Zs.push_back(t.input(Z));
  Var Wv = t.input(W);
  Var av = t.input(a.transpose());
  Var a1 = t.slice_cols(av, 0, d), a2 = t.slice_cols(av, d, d);
  std::vector<Var> u(static_cast<std::size_t>(v)), w(u);
  for (Eigen::Index k = 0; k < v; ++k) {
    Var ZW = t.matmul(Zs[k], Wv, false, true);
    u[k] = t.matmul(ZW, a1, false, true);
    w[k] = t.matmul(ZW, a2, false, true);
  }
  std::vector<Var> s(static_cast<std::size_t>(v));
  for (Eigen::Index k = 0; k < v; ++k) {
    Var acc;
    for (Eigen::Index j = 0; j < v; ++j) {
      Var pair_score = t.mean_all(t.leaky_relu(t.add(u[k], w[j]), slope));
      acc = (j == 0) ? pair_score : t.add(acc, pair_score);
    }
    s[k] = acc;
  }
  Var alpha = t.softmax_rows(t.concat_cols(s));
  Var fused;
  for (Eigen::Index k = 0; k < v; ++k) {
    Var term = t.scale_by(Zs[k], t.slice_cols(alpha, k, 1));
    fused = (k == 0) ? term : t.add(fused, term);
  }
  ViewFusionOut out;
  out.weights = t.value(alpha).row(0).transpose();
  out.fused = t.value(fused);
  return out;
}

double loss_graph_reconstruction(const Eigen::MatrixXd& E, const Eigen::MatrixXd& A) {
  if (A.rows() != E.rows() || A.cols() != E.rows())
    throw std::invalid_argument("loss_graph_reconstruction: shape mismatch");
  return (A - E * E.transpose()).array().abs().mean();
}

double loss_neighbor_triplet(const Eigen::MatrixXd& E,
                             const std::vector<Eigen::Index>& pos,
                             const std::vector<Eigen::Index>& neg, double margin) {
  const Eigen::Index m = E.rows();
  if (static_cast<Eigen::Index>(pos.size()) != m ||
      static_cast<Eigen::Index>(neg.size()) != m)
    throw std::invalid_argument("loss_neighbor_triplet: index size mismatch");
  double total = 0.0;
  for (Eigen::Index i = 0; i < m; ++i) {
    const double dp = (E.row(i) - E.row(pos[static_cast<std::size_t>(i)])).norm();
    const double dn = (E.row(i) - E.row(neg[static_cast<std::size_t>(i)])).norm();
    total += std::max(dp - dn + margin, 0.0);
  }
  return total / static_cast<double>(m);
}

double loss_smooth_l1(const Eigen::VectorXd& pred, const Eigen::VectorXd& target,
                      double beta) {
  if (pred.size() != target.size())
    throw std::invalid_argument("loss_smooth_l1: size mismatch");
  if (beta <= 0.0) throw std::invalid_argument("loss_smooth_l1: beta must be > 0");
  double total = 0.0;
  for (Eigen::Index i = 0; i < pred.size(); ++i) {
    const double diff = std::abs(pred(i) - target(i));
    total += diff < beta ? 0.5 * diff * diff / beta : diff - 0.5 * beta;
  }
  return total / static_cast<double>(pred.size());
}

void sample_triplets(const Eigen::MatrixXi& neighbors, Eigen::Index m,
                     std::uint64_t seed, std::uint64_t epoch,
                     std::vector<Eigen::Index>& pos, std::vector<Eigen::Index>& neg) {
  if (neighbors.rows() != m)
    throw std::invalid_argument("sample_triplets: neighbor table size mismatch");
  Rng rng = Rng::substream(seed, "grid-triplets-" + std::to_string(epoch));
  pos.assign(static_cast<std::size_t>(m), 0);
  neg.assign(static_cast<std::size_t>(m), 0);
  for (Eigen::Index i = 0; i < m; ++i) {
    std::vector<Eigen::Index> nbrs;
    for (Eigen::Index k = 0; k < neighbors.cols(); ++k)
      if (neighbors(i, k) >= 0) nbrs.push_back(neighbors(i, k));
    if (nbrs.empty())
      throw std::runtime_error("sample_triplets: cell " + std::to_string(i) +
                               " has no neighbors");
    pos[static_cast<std::size_t>(i)] =
        nbrs[rng.uniform_index(static_cast<std::uint64_t>(nbrs.size()))];
    std::unordered_set<Eigen::Index> forbidden(nbrs.begin(), nbrs.end());
    forbidden.insert(i);
    if (static_cast<Eigen::Index>(forbidden.size()) >= m)
      throw std::runtime_error("sample_triplets: no non-neighbor available");
    for (int tries = 0;; ++tries) {
      const auto j = static_cast<Eigen::Index>(
          rng.uniform_index(static_cast<std::uint64_t>(m)));
      if (forbidden.count(j) == 0) {
        neg[static_cast<std::size_t>(i)] = j;
        break;
      }
      if (tries > 100000)
        throw std::runtime_error("sample_triplets: rejection sampling stuck");
    }
  }
}

}  // namespace flexireg
