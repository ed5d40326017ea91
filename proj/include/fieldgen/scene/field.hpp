#pragma once

#include <string>
#include <vector>

#include "fieldgen/ad/ops.hpp"
#include "fieldgen/ad/param_store.hpp"
#include "fieldgen/scene/encoding.hpp"

namespace fieldgen::scene {

template <class T>
struct FieldSample {
  ad::Tensor<T> sigma;    // [N,1], nonnegative
  ad::Tensor<T> feature;  // [N,M_f]
};

// MLP feature field for one entity class. The trunk sees the encoded
// position with the shape code; the density head reads the trunk only, so
// sigma is independent of direction and appearance by construction. The
// feature head additionally sees the encoded direction and appearance code.
template <class T>
struct FieldParams {
  long d_z = 64;
  long m_f = 32;
  long hidden = 64;
  long depth = 4;
  long n_freq_x = 6;
  long n_freq_d = 4;

  std::vector<ad::Tensor<T>> trunk_w, trunk_b;
  ad::Tensor<T> sigma_w, sigma_b;
  ad::Tensor<T> feat_hidden_w, feat_hidden_b;
  ad::Tensor<T> feat_out_w, feat_out_b;

  static FieldParams init(long d_z, long m_f, long hidden, long depth,
                          long n_freq_x, long n_freq_d, Rng& rng) {
    FieldParams p;
    p.d_z = d_z;
    p.m_f = m_f;
    p.hidden = hidden;
    p.depth = depth;
    p.n_freq_x = n_freq_x;
    p.n_freq_d = n_freq_d;
    auto he = [&rng](long out, long in) {
      return ad::Tensor<T>::randn({out, in}, rng,
                                  static_cast<T>(std::sqrt(2.0 / in)), true);
    };
    long in_dim = encoding_width(n_freq_x) + d_z;
    for (long l = 0; l < depth; ++l) {
      p.trunk_w.push_back(he(hidden, in_dim));
      p.trunk_b.push_back(ad::Tensor<T>::zeros({hidden}, true));
      in_dim = hidden;
    }
    p.sigma_w = he(1, hidden);
    p.sigma_b = ad::Tensor<T>::zeros({1}, true);
    const long feat_in = hidden + encoding_width(n_freq_d) + d_z;
    p.feat_hidden_w = he(hidden, feat_in);
    p.feat_hidden_b = ad::Tensor<T>::zeros({hidden}, true);
    p.feat_out_w = he(m_f, hidden);
    p.feat_out_b = ad::Tensor<T>::zeros({m_f}, true);
    return p;
  }

  void register_params(ad::ParamStore<T>& store, const std::string& prefix) {
    for (std::size_t l = 0; l < trunk_w.size(); ++l) {
      store.add(prefix + ".trunk" + std::to_string(l) + ".w", trunk_w[l]);
      store.add(prefix + ".trunk" + std::to_string(l) + ".b", trunk_b[l]);
    }
    store.add(prefix + ".sigma.w", sigma_w);
    store.add(prefix + ".sigma.b", sigma_b);
    store.add(prefix + ".feat_hidden.w", feat_hidden_w);
    store.add(prefix + ".feat_hidden.b", feat_hidden_b);
    store.add(prefix + ".feat_out.w", feat_out_w);
    store.add(prefix + ".feat_out.b", feat_out_b);
  }
};

// A run of row blocks sharing one field's weights: concatenated encodings
// plus one (z_s, z_a) pair per block. Batching entity evaluations across a
// scene batch into one matmul chain is what keeps training fast.
template <class T>
struct FieldBlocks {
  ad::Tensor<T> x_enc;  // [total_rows, 6*n_freq_x]
  ad::Tensor<T> d_enc;  // [total_rows, 6*n_freq_d]
  std::vector<std::pair<ad::Tensor<T>, ad::Tensor<T>>> codes;  // (z_s, z_a)
  std::vector<long> rows;  // rows per block, aligned with codes
};

template <class T>
FieldSample<T> eval_field_blocks(const FieldParams<T>& p,
                                 const FieldBlocks<T>& in) {
  ad::require(in.x_enc.rank() == 2 &&
                  in.x_enc.dim(1) == encoding_width(p.n_freq_x),
              "eval_field: x encoding width " +
                  ad::shape_str(in.x_enc.shape()) +
                  " does not match n_freq_x " + std::to_string(p.n_freq_x));
  ad::require(in.d_enc.rank() == 2 &&
                  in.d_enc.dim(1) == encoding_width(p.n_freq_d) &&
                  in.d_enc.dim(0) == in.x_enc.dim(0),
              "eval_field: d encoding " + ad::shape_str(in.d_enc.shape()) +
                  " inconsistent with x encoding " +
                  ad::shape_str(in.x_enc.shape()));
  ad::require(!in.codes.empty() && in.codes.size() == in.rows.size(),
              "eval_field: code blocks and row counts disagree");
  long total = 0;
  for (long r : in.rows) total += r;
  ad::require(total == in.x_enc.dim(0),
              "eval_field: block rows do not cover the encodings");

  const long block_rows = in.rows[0];
  for (long r : in.rows)
    ad::require(r == block_rows,
                "eval_field: blocks must have equal row counts");
  std::vector<ad::Tensor<T>> zs_rows, za_rows;
  for (std::size_t b = 0; b < in.codes.size(); ++b) {
    const auto& [zs, za] = in.codes[b];
    ad::require(zs.rank() == 2 && zs.dim(0) == 1 && zs.dim(1) == p.d_z &&
                    za.shape() == zs.shape(),
                "eval_field: latent codes must be [1," +
                    std::to_string(p.d_z) + "], got " +
                    ad::shape_str(zs.shape()) + " and " +
                    ad::shape_str(za.shape()));
    zs_rows.push_back(zs);
    za_rows.push_back(za);
  }
  auto z_s = zs_rows.size() == 1 ? zs_rows[0] : ad::concat_rows(zs_rows);
  auto z_a = za_rows.size() == 1 ? za_rows[0] : ad::concat_rows(za_rows);

  auto h = ad::block_linear<T>({in.x_enc}, z_s, block_rows, p.trunk_w[0],
                               p.trunk_b[0], /*relu=*/true);
  for (std::size_t l = 1; l < p.trunk_w.size(); ++l)
    h = ad::block_linear<T>({h}, ad::Tensor<T>(), 0, p.trunk_w[l],
                            p.trunk_b[l], true);

  FieldSample<T> out;
  out.sigma = ad::softplus(ad::block_linear<T>({h}, ad::Tensor<T>(), 0,
                                               p.sigma_w, p.sigma_b, false));
  auto f_h = ad::block_linear<T>({h, in.d_enc}, z_a, block_rows,
                                 p.feat_hidden_w, p.feat_hidden_b, true);
  out.feature = ad::block_linear<T>({f_h}, ad::Tensor<T>(), 0, p.feat_out_w,
                                    p.feat_out_b, false);
  return out;
}

// Single-entity evaluation with codes z_s, z_a of shape [1,D_z]. sigma is
// softplus-mapped, so it is nonnegative everywhere.
template <class T>
FieldSample<T> eval_field(const FieldParams<T>& p, const ad::Tensor<T>& x_enc,
                          const ad::Tensor<T>& d_enc,
                          const ad::Tensor<T>& z_s, const ad::Tensor<T>& z_a) {
  FieldBlocks<T> in;
  in.x_enc = x_enc;
  in.d_enc = d_enc;
  in.codes.emplace_back(z_s, z_a);
  in.rows.push_back(x_enc.rank() == 2 ? x_enc.dim(0) : 0);
  return eval_field_blocks(p, in);
}

inline constexpr double kComposeEps = 1e-8;

// Scene composition: densities add, features average weighted by density,
// with an epsilon guard where the total density vanishes. Both sums run
// through sum_stack's canonical per-element order, so the composite is
// exactly invariant to the entity order.
template <class T>
FieldSample<T> compose(const std::vector<FieldSample<T>>& samples) {
  ad::require(!samples.empty(), "compose: at least one entity required");
  const auto& first = samples.front();
  for (const auto& s : samples) {
    ad::require(s.sigma.shape() == first.sigma.shape() &&
                    s.feature.shape() == first.feature.shape(),
                "compose: misaligned entity batches " +
                    ad::shape_str(s.sigma.shape()) + " vs " +
                    ad::shape_str(first.sigma.shape()));
  }
  std::vector<ad::Tensor<T>> sigmas, weighted;
  for (const auto& s : samples) {
    sigmas.push_back(s.sigma);
    weighted.push_back(ad::mul_colvec(s.feature, s.sigma));
  }
  FieldSample<T> out;
  out.sigma = ad::sum_stack(sigmas);
  out.feature = ad::mul_colvec(
      ad::sum_stack(weighted),
      ad::reciprocal(ad::clamp_min(out.sigma, kComposeEps)));
  return out;
}

}  // namespace fieldgen::scene
