#pragma once

#include <cmath>
#include <cstddef>
#include <functional>
#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

#include "roadseq/array.hpp"
#include "roadseq/error.hpp"

namespace roadseq::nn {

using NodeId = std::size_t;

namespace detail {

// C[m,n] += A[m,k] * B[k,n]
inline void matmul_acc(const double* A, const double* B, double* C,
                       std::size_t m, std::size_t k, std::size_t n) {
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t p = 0; p < k; ++p) {
      const double a = A[i * k + p];
      const double* brow = B + p * n;
      double* crow = C + i * n;
      for (std::size_t j = 0; j < n; ++j) crow[j] += a * brow[j];
    }
}

// C[k,n] += A^T * B where A is [m,k], B is [m,n]
inline void matmul_at_acc(const double* A, const double* B, double* C,
                          std::size_t m, std::size_t k, std::size_t n) {
  for (std::size_t p = 0; p < m; ++p)
    for (std::size_t i = 0; i < k; ++i) {
      const double a = A[p * k + i];
      const double* brow = B + p * n;
      double* crow = C + i * n;
      for (std::size_t j = 0; j < n; ++j) crow[j] += a * brow[j];
    }
}

// C[m,k] += A * B^T where A is [m,n], B is [k,n]
inline void matmul_bt_acc(const double* A, const double* B, double* C,
                          std::size_t m, std::size_t n, std::size_t k) {
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t p = 0; p < k; ++p) {
      const double* arow = A + i * n;
      const double* brow = B + p * n;
      double s = 0.0;
      for (std::size_t j = 0; j < n; ++j) s += arow[j] * brow[j];
      C[i * k + p] += s;
    }
}

inline double sigmoid(double x) { return 1.0 / (1.0 + std::exp(-x)); }

}  // namespace detail

enum class NllNorm {
  kSumWeights,  // divide by the sum of per-example weights
  kBatchSize,   // divide by the number of examples
};

// Reverse-mode tape over batched dense arrays. Operators are fused at the
// granularity used by the models (linear, pooling, attention, lstm cell,
// softmax, weighted nll) with hand-written backward passes; finite-difference
// checks in the test suite pin each one down. Single use: build, call
// backward() once, read gradients.
class Graph {
 public:
  Graph() = default;
  Graph(const Graph&) = delete;
  Graph& operator=(const Graph&) = delete;

  const Array& value(NodeId id) const { return nodes_[id].value; }

  const Array& grad(NodeId id) const {
    if (!nodes_[id].rg) throw ValidationError("graph: node has no gradient");
    return nodes_[id].grad;
  }

  std::size_t size() const { return nodes_.size(); }

  NodeId constant(Array a) { return push(std::move(a), false); }

  // Input that receives a gradient (used for feature-sensitivity tests).
  NodeId leaf(Array a) { return push(std::move(a), true); }

  // Trainable tensor; one node per Parameter per graph no matter how many
  // branches use it. Gradients are flushed into p.grad by backward().
  NodeId param(Parameter& p) {
    auto it = param_ids_.find(&p);
    if (it != param_ids_.end()) return it->second;
    const NodeId id = push(p.value, true);
    param_ids_.emplace(&p, id);
    param_nodes_.push_back({&p, id});
    return id;
  }

  // x: [..., in], w: [in, out], b: [out] -> [..., out]
  NodeId linear(NodeId x, NodeId w, NodeId b) {
    const Array& xv = nodes_[x].value;
    const Array& wv = nodes_[w].value;
    const Array& bv = nodes_[b].value;
    if (xv.rank() < 1 || wv.rank() != 2 || bv.rank() != 1)
      throw ValidationError("linear: bad ranks");
    const std::size_t in = wv.dim(0), out = wv.dim(1);
    if (xv.shape.back() != in)
      throw ValidationError("linear: input width " +
                            std::to_string(xv.shape.back()) +
                            " does not match weight rows " + std::to_string(in));
    if (bv.dim(0) != out) throw ValidationError("linear: bias width mismatch");
    const std::size_t rows = xv.numel() / in;

    std::vector<std::size_t> oshape = xv.shape;
    oshape.back() = out;
    Array y(oshape);
    for (std::size_t r = 0; r < rows; ++r)
      for (std::size_t j = 0; j < out; ++j) y.v[r * out + j] = bv.v[j];
    detail::matmul_acc(xv.v.data(), wv.v.data(), y.v.data(), rows, in, out);

    const NodeId id = push(std::move(y), any_rg({x, w, b}));
    if (nodes_[id].rg)
      nodes_[id].back = [this, id, x, w, b, rows, in, out] {
        const double* dy = nodes_[id].grad.v.data();
        const double* xv2 = nodes_[x].value.v.data();
        const double* wv2 = nodes_[w].value.v.data();
        if (nodes_[x].rg)
          detail::matmul_bt_acc(dy, wv2, nodes_[x].grad.v.data(), rows, out, in);
        if (nodes_[w].rg)
          detail::matmul_at_acc(xv2, dy, nodes_[w].grad.v.data(), rows, in, out);
        if (nodes_[b].rg) {
          double* db = nodes_[b].grad.v.data();
          for (std::size_t r = 0; r < rows; ++r)
            for (std::size_t j = 0; j < out; ++j) db[j] += dy[r * out + j];
        }
      };
    return id;
  }

  NodeId tanh_op(NodeId x) {
    Array y = nodes_[x].value;
    for (double& t : y.v) t = std::tanh(t);
    const NodeId id = push(std::move(y), nodes_[x].rg);
    if (nodes_[id].rg)
      nodes_[id].back = [this, id, x] {
        const Array& yv = nodes_[id].value;
        const Array& dy = nodes_[id].grad;
        double* dx = nodes_[x].grad.v.data();
        for (std::size_t i = 0; i < yv.numel(); ++i)
          dx[i] += dy.v[i] * (1.0 - yv.v[i] * yv.v[i]);
      };
    return id;
  }

  // Concatenate along the last axis; leading dims must agree.
  NodeId concat(const std::vector<NodeId>& xs) {
    if (xs.empty()) throw ValidationError("concat: no inputs");
    std::vector<std::size_t> lead = nodes_[xs[0]].value.shape;
    lead.pop_back();
    std::size_t total = 0;
    for (NodeId x : xs) {
      std::vector<std::size_t> l = nodes_[x].value.shape;
      if (l.empty()) throw ValidationError("concat: rank-0 input");
      const std::size_t last = l.back();
      l.pop_back();
      if (l != lead) throw ValidationError("concat: leading dims differ");
      total += last;
    }
    std::vector<std::size_t> oshape = lead;
    oshape.push_back(total);
    Array y(oshape);
    const std::size_t rows = y.numel() / total;
    std::size_t off = 0;
    for (NodeId x : xs) {
      const Array& xv = nodes_[x].value;
      const std::size_t w = xv.shape.back();
      for (std::size_t r = 0; r < rows; ++r)
        for (std::size_t j = 0; j < w; ++j)
          y.v[r * total + off + j] = xv.v[r * w + j];
      off += w;
    }
    const NodeId id = push(std::move(y), any_rg(xs));
    if (nodes_[id].rg)
      nodes_[id].back = [this, id, xs, rows, total] {
        const double* dy = nodes_[id].grad.v.data();
        std::size_t o = 0;
        for (NodeId x : xs) {
          const std::size_t w = nodes_[x].value.shape.back();
          if (nodes_[x].rg) {
            double* dx = nodes_[x].grad.v.data();
            for (std::size_t r = 0; r < rows; ++r)
              for (std::size_t j = 0; j < w; ++j)
                dx[r * w + j] += dy[r * total + o + j];
          }
          o += w;
        }
      };
    return id;
  }

  NodeId slice_cols(NodeId x, std::size_t offset, std::size_t len) {
    const Array& xv = nodes_[x].value;
    if (xv.rank() < 1) throw ValidationError("slice_cols: rank-0 input");
    const std::size_t last = xv.shape.back();
    if (offset + len > last) throw ValidationError("slice_cols: out of range");
    std::vector<std::size_t> oshape = xv.shape;
    oshape.back() = len;
    Array y(oshape);
    const std::size_t rows = xv.numel() / last;
    for (std::size_t r = 0; r < rows; ++r)
      for (std::size_t j = 0; j < len; ++j)
        y.v[r * len + j] = xv.v[r * last + offset + j];
    const NodeId id = push(std::move(y), nodes_[x].rg);
    if (nodes_[id].rg)
      nodes_[id].back = [this, id, x, offset, len, rows, last] {
        const double* dy = nodes_[id].grad.v.data();
        double* dx = nodes_[x].grad.v.data();
        for (std::size_t r = 0; r < rows; ++r)
          for (std::size_t j = 0; j < len; ++j)
            dx[r * last + offset + j] += dy[r * len + j];
      };
    return id;
  }

  // Spatial pyramid pooling with average cells. grid: [B,H,W,C], levels g
  // partition H and W into g bins with rounded boundaries; output is
  // [B, C * sum(g^2)], level-major, cell row-major, channel innermost.
  NodeId spp_pool(NodeId grid, const std::vector<std::size_t>& levels) {
    const Array& gv = nodes_[grid].value;
    if (gv.rank() != 4) throw ValidationError("spp_pool: grid must be [B,H,W,C]");
    const std::size_t B = gv.dim(0), H = gv.dim(1), W = gv.dim(2), C = gv.dim(3);
    if (levels.empty()) throw ValidationError("spp_pool: no levels");
    std::size_t cells = 0;
    for (std::size_t g : levels) {
      if (g == 0 || g > H || g > W)
        throw ValidationError("spp_pool: level " + std::to_string(g) +
                              " incompatible with grid " + std::to_string(H) +
                              "x" + std::to_string(W));
      cells += g * g;
    }
    const std::size_t D = cells * C;

    auto edge = [](std::size_t i, std::size_t n, std::size_t g) {
      return static_cast<std::size_t>(
          std::lround(static_cast<double>(i * n) / static_cast<double>(g)));
    };

    Array y({B, D});
    for (std::size_t b = 0; b < B; ++b) {
      std::size_t o = 0;
      for (std::size_t g : levels)
        for (std::size_t i = 0; i < g; ++i) {
          const std::size_t r0 = edge(i, H, g), r1 = edge(i + 1, H, g);
          for (std::size_t j = 0; j < g; ++j) {
            const std::size_t c0 = edge(j, W, g), c1 = edge(j + 1, W, g);
            const double inv = 1.0 / static_cast<double>((r1 - r0) * (c1 - c0));
            for (std::size_t ch = 0; ch < C; ++ch) {
              double s = 0.0;
              for (std::size_t r = r0; r < r1; ++r)
                for (std::size_t c = c0; c < c1; ++c)
                  s += gv.v[((b * H + r) * W + c) * C + ch];
              y.v[b * D + o + ch] = s * inv;
            }
            o += C;
          }
        }
    }
    const NodeId id = push(std::move(y), nodes_[grid].rg);
    if (nodes_[id].rg)
      nodes_[id].back = [this, id, grid, levels, B, H, W, C, D, edge] {
        const double* dy = nodes_[id].grad.v.data();
        double* dg = nodes_[grid].grad.v.data();
        for (std::size_t b = 0; b < B; ++b) {
          std::size_t o = 0;
          for (std::size_t g : levels)
            for (std::size_t i = 0; i < g; ++i) {
              const std::size_t r0 = edge(i, H, g), r1 = edge(i + 1, H, g);
              for (std::size_t j = 0; j < g; ++j) {
                const std::size_t c0 = edge(j, W, g), c1 = edge(j + 1, W, g);
                const double inv =
                    1.0 / static_cast<double>((r1 - r0) * (c1 - c0));
                for (std::size_t ch = 0; ch < C; ++ch) {
                  const double d = dy[b * D + o + ch] * inv;
                  for (std::size_t r = r0; r < r1; ++r)
                    for (std::size_t c = c0; c < c1; ++c)
                      dg[((b * H + r) * W + c) * C + ch] += d;
                }
                o += C;
              }
            }
        }
      };
    return id;
  }

  // Scaled dot-product attention pooling. grid: [B,H,W,C], query: [C].
  // Scores s_p = (q . f_p) / sqrt(C) over the H*W positions, softmax to
  // weights, output the weighted sum of position features: [B,C].
  NodeId attention_pool(NodeId grid, NodeId query) {
    const Array& gv = nodes_[grid].value;
    const Array& qv = nodes_[query].value;
    if (gv.rank() != 4)
      throw ValidationError("attention_pool: grid must be [B,H,W,C]");
    if (qv.rank() != 1 || qv.dim(0) != gv.dim(3))
      throw ValidationError("attention_pool: query width mismatch");
    const std::size_t B = gv.dim(0), P = gv.dim(1) * gv.dim(2), C = gv.dim(3);
    const double scale = 1.0 / std::sqrt(static_cast<double>(C));

    Array alpha({B, P});
    Array y({B, C});
    std::vector<double> s(P);
    for (std::size_t b = 0; b < B; ++b) {
      const double* f = gv.v.data() + b * P * C;
      double mx = -1e300;
      for (std::size_t p = 0; p < P; ++p) {
        double dot = 0.0;
        for (std::size_t c = 0; c < C; ++c) dot += qv.v[c] * f[p * C + c];
        s[p] = dot * scale;
        if (s[p] > mx) mx = s[p];
      }
      double z = 0.0;
      for (std::size_t p = 0; p < P; ++p) {
        alpha.v[b * P + p] = std::exp(s[p] - mx);
        z += alpha.v[b * P + p];
      }
      for (std::size_t p = 0; p < P; ++p) {
        alpha.v[b * P + p] /= z;
        const double a = alpha.v[b * P + p];
        for (std::size_t c = 0; c < C; ++c) y.v[b * C + c] += a * f[p * C + c];
      }
    }
    const NodeId id = push(std::move(y), any_rg({grid, query}));
    if (nodes_[id].rg)
      nodes_[id].back = [this, id, grid, query, alpha = std::move(alpha), B, P,
                         C, scale] {
        const double* dy = nodes_[id].grad.v.data();
        const Array& gv2 = nodes_[grid].value;
        const Array& qv2 = nodes_[query].value;
        std::vector<double> dalpha(P), ds(P);
        for (std::size_t b = 0; b < B; ++b) {
          const double* f = gv2.v.data() + b * P * C;
          const double* a = alpha.v.data() + b * P;
          const double* g = dy + b * C;
          double dot_da_a = 0.0;
          for (std::size_t p = 0; p < P; ++p) {
            double d = 0.0;
            for (std::size_t c = 0; c < C; ++c) d += g[c] * f[p * C + c];
            dalpha[p] = d;
            dot_da_a += d * a[p];
          }
          for (std::size_t p = 0; p < P; ++p)
            ds[p] = a[p] * (dalpha[p] - dot_da_a);
          if (nodes_[query].rg) {
            double* dq = nodes_[query].grad.v.data();
            for (std::size_t p = 0; p < P; ++p)
              for (std::size_t c = 0; c < C; ++c)
                dq[c] += ds[p] * f[p * C + c] * scale;
          }
          if (nodes_[grid].rg) {
            double* df = nodes_[grid].grad.v.data() + b * P * C;
            for (std::size_t p = 0; p < P; ++p)
              for (std::size_t c = 0; c < C; ++c)
                df[p * C + c] += a[p] * g[c] + ds[p] * qv2.v[c] * scale;
          }
        }
      };
    return id;
  }

  // table: [C, d], indices in [0, C) -> [B, d]
  NodeId embedding_lookup(NodeId table, const std::vector<int>& indices) {
    const Array& tv = nodes_[table].value;
    if (tv.rank() != 2) throw ValidationError("embedding_lookup: table rank");
    const std::size_t C = tv.dim(0), d = tv.dim(1), B = indices.size();
    for (int ix : indices)
      if (ix < 0 || static_cast<std::size_t>(ix) >= C)
        throw ValidationError("embedding_lookup: index out of range");
    Array y({B, d});
    for (std::size_t b = 0; b < B; ++b)
      for (std::size_t j = 0; j < d; ++j)
        y.v[b * d + j] = tv.v[static_cast<std::size_t>(indices[b]) * d + j];
    const NodeId id = push(std::move(y), nodes_[table].rg);
    if (nodes_[id].rg)
      nodes_[id].back = [this, id, table, indices, d] {
        const double* dy = nodes_[id].grad.v.data();
        double* dt = nodes_[table].grad.v.data();
        for (std::size_t b = 0; b < indices.size(); ++b)
          for (std::size_t j = 0; j < d; ++j)
            dt[static_cast<std::size_t>(indices[b]) * d + j] += dy[b * d + j];
      };
    return id;
  }

  // One LSTM cell step. x: [B,in], h_prev/c_prev: [B,H], w_ih: [in,4H],
  // w_hh: [H,4H], bias: [4H], gate order i,f,g,o. Returns [B,2H] with the
  // new hidden state in columns [0,H) and the new cell state in [H,2H).
  NodeId lstm_step(NodeId x, NodeId h_prev, NodeId c_prev, NodeId w_ih,
                   NodeId w_hh, NodeId bias) {
    const Array& xv = nodes_[x].value;
    const Array& hv = nodes_[h_prev].value;
    const Array& cv = nodes_[c_prev].value;
    const Array& wiv = nodes_[w_ih].value;
    const Array& whv = nodes_[w_hh].value;
    const Array& bv = nodes_[bias].value;
    if (xv.rank() != 2 || hv.rank() != 2 || cv.rank() != 2 || wiv.rank() != 2 ||
        whv.rank() != 2 || bv.rank() != 1)
      throw ValidationError("lstm_step: bad ranks");
    const std::size_t B = xv.dim(0), in = xv.dim(1), H = hv.dim(1);
    if (hv.dim(0) != B || cv.dim(0) != B || cv.dim(1) != H)
      throw ValidationError("lstm_step: state shape mismatch");
    if (wiv.dim(0) != in || wiv.dim(1) != 4 * H || whv.dim(0) != H ||
        whv.dim(1) != 4 * H || bv.dim(0) != 4 * H)
      throw ValidationError("lstm_step: weight shape mismatch");

    Array gates({B, 4 * H});
    for (std::size_t b = 0; b < B; ++b)
      for (std::size_t j = 0; j < 4 * H; ++j) gates.v[b * 4 * H + j] = bv.v[j];
    detail::matmul_acc(xv.v.data(), wiv.v.data(), gates.v.data(), B, in, 4 * H);
    detail::matmul_acc(hv.v.data(), whv.v.data(), gates.v.data(), B, H, 4 * H);

    Array tanh_c({B, H});
    Array y({B, 2 * H});
    for (std::size_t b = 0; b < B; ++b) {
      double* g = gates.v.data() + b * 4 * H;
      for (std::size_t j = 0; j < H; ++j) {
        const double gi = detail::sigmoid(g[j]);
        const double gf = detail::sigmoid(g[H + j]);
        const double gg = std::tanh(g[2 * H + j]);
        const double go = detail::sigmoid(g[3 * H + j]);
        g[j] = gi;
        g[H + j] = gf;
        g[2 * H + j] = gg;
        g[3 * H + j] = go;
        const double cn = gf * cv.v[b * H + j] + gi * gg;
        const double tc = std::tanh(cn);
        tanh_c.v[b * H + j] = tc;
        y.v[b * 2 * H + j] = go * tc;
        y.v[b * 2 * H + H + j] = cn;
      }
    }
    const NodeId id =
        push(std::move(y), any_rg({x, h_prev, c_prev, w_ih, w_hh, bias}));
    if (nodes_[id].rg)
      nodes_[id].back = [this, id, x, h_prev, c_prev, w_ih, w_hh, bias,
                         gates = std::move(gates), tanh_c = std::move(tanh_c),
                         B, in, H] {
        const double* dy = nodes_[id].grad.v.data();
        const Array& cv2 = nodes_[c_prev].value;
        Array dgates({B, 4 * H});
        for (std::size_t b = 0; b < B; ++b) {
          const double* g = gates.v.data() + b * 4 * H;
          double* dgr = dgates.v.data() + b * 4 * H;
          for (std::size_t j = 0; j < H; ++j) {
            const double gi = g[j], gf = g[H + j], gg = g[2 * H + j],
                         go = g[3 * H + j];
            const double tc = tanh_c.v[b * H + j];
            const double dh = dy[b * 2 * H + j];
            const double dc_out = dy[b * 2 * H + H + j];
            const double dgo = dh * tc;
            const double dc = dc_out + dh * go * (1.0 - tc * tc);
            const double dgf = dc * cv2.v[b * H + j];
            const double dgi = dc * gg;
            const double dgg = dc * gi;
            if (nodes_[c_prev].rg)
              nodes_[c_prev].grad.v[b * H + j] += dc * gf;
            dgr[j] = dgi * gi * (1.0 - gi);
            dgr[H + j] = dgf * gf * (1.0 - gf);
            dgr[2 * H + j] = dgg * (1.0 - gg * gg);
            dgr[3 * H + j] = dgo * go * (1.0 - go);
          }
        }
        const double* dg = dgates.v.data();
        if (nodes_[x].rg)
          detail::matmul_bt_acc(dg, nodes_[w_ih].value.v.data(),
                                nodes_[x].grad.v.data(), B, 4 * H, in);
        if (nodes_[h_prev].rg)
          detail::matmul_bt_acc(dg, nodes_[w_hh].value.v.data(),
                                nodes_[h_prev].grad.v.data(), B, 4 * H, H);
        if (nodes_[w_ih].rg)
          detail::matmul_at_acc(nodes_[x].value.v.data(), dg,
                                nodes_[w_ih].grad.v.data(), B, in, 4 * H);
        if (nodes_[w_hh].rg)
          detail::matmul_at_acc(nodes_[h_prev].value.v.data(), dg,
                                nodes_[w_hh].grad.v.data(), B, H, 4 * H);
        if (nodes_[bias].rg) {
          double* db = nodes_[bias].grad.v.data();
          for (std::size_t b = 0; b < B; ++b)
            for (std::size_t j = 0; j < 4 * H; ++j) db[j] += dg[b * 4 * H + j];
        }
      };
    return id;
  }

  // Row-wise softmax over the last axis with max subtraction.
  NodeId softmax(NodeId x) {
    const Array& xv = nodes_[x].value;
    if (xv.rank() < 1) throw ValidationError("softmax: rank-0 input");
    const std::size_t C = xv.shape.back();
    const std::size_t rows = xv.numel() / C;
    Array y = xv;
    for (std::size_t r = 0; r < rows; ++r) {
      double* row = y.v.data() + r * C;
      double mx = row[0];
      for (std::size_t j = 1; j < C; ++j) mx = std::max(mx, row[j]);
      double z = 0.0;
      for (std::size_t j = 0; j < C; ++j) {
        row[j] = std::exp(row[j] - mx);
        z += row[j];
      }
      for (std::size_t j = 0; j < C; ++j) row[j] /= z;
    }
    const NodeId id = push(std::move(y), nodes_[x].rg);
    if (nodes_[id].rg)
      nodes_[id].back = [this, id, x, rows, C] {
        const double* p = nodes_[id].value.v.data();
        const double* dy = nodes_[id].grad.v.data();
        double* dx = nodes_[x].grad.v.data();
        for (std::size_t r = 0; r < rows; ++r) {
          double dot = 0.0;
          for (std::size_t j = 0; j < C; ++j) dot += dy[r * C + j] * p[r * C + j];
          for (std::size_t j = 0; j < C; ++j)
            dx[r * C + j] += p[r * C + j] * (dy[r * C + j] - dot);
        }
      };
    return id;
  }

  // Weighted negative log likelihood of the correct-class posteriors.
  // posteriors: [N,C]; value = sum_n w_n * (-ln clamp(P_n)) / denom where
  // denom is sum(w) or N. Posteriors are clamped to [1e-12, 1] before the
  // log; gradients vanish on the clamped side.
  NodeId weighted_nll(NodeId posteriors, const std::vector<int>& labels,
                      const std::vector<double>& weights, NllNorm norm) {
    const Array& pv = nodes_[posteriors].value;
    if (pv.rank() != 2) throw ValidationError("weighted_nll: posteriors rank");
    const std::size_t N = pv.dim(0), C = pv.dim(1);
    if (labels.size() != N || weights.size() != N)
      throw ValidationError("weighted_nll: labels/weights length mismatch");
    double wsum = 0.0;
    for (double w : weights) {
      if (w < 0.0) throw ValidationError("weighted_nll: negative weight");
      wsum += w;
    }
    const double denom =
        norm == NllNorm::kSumWeights ? wsum : static_cast<double>(N);
    if (denom <= 0.0) throw ValidationError("weighted_nll: zero denominator");

    double acc = 0.0;
    for (std::size_t n = 0; n < N; ++n) {
      const int y = labels[n];
      if (y < 0 || static_cast<std::size_t>(y) >= C)
        throw ValidationError("weighted_nll: label out of range");
      double p = pv.v[n * C + static_cast<std::size_t>(y)];
      p = std::min(1.0, std::max(1e-12, p));
      acc += weights[n] * -std::log(p);
    }
    const NodeId id = push(Array::scalar(acc / denom), nodes_[posteriors].rg);
    if (nodes_[id].rg)
      nodes_[id].back = [this, id, posteriors, labels, weights, denom, C] {
        const double droot = nodes_[id].grad.v[0];
        const Array& pv2 = nodes_[posteriors].value;
        double* dp = nodes_[posteriors].grad.v.data();
        for (std::size_t n = 0; n < labels.size(); ++n) {
          const std::size_t y = static_cast<std::size_t>(labels[n]);
          const double p = pv2.v[n * C + y];
          if (p < 1e-12 || p > 1.0) continue;
          dp[n * C + y] -= droot * weights[n] / (denom * p);
        }
      };
    return id;
  }

  // Arithmetic mean of scalar nodes (multi-task total).
  NodeId mean_scalars(const std::vector<NodeId>& xs) {
    if (xs.empty()) throw ValidationError("mean_scalars: no inputs");
    double acc = 0.0;
    for (NodeId x : xs) {
      if (nodes_[x].value.numel() != 1)
        throw ValidationError("mean_scalars: non-scalar input");
      acc += nodes_[x].value.v[0];
    }
    const double inv = 1.0 / static_cast<double>(xs.size());
    const NodeId id = push(Array::scalar(acc * inv), any_rg(xs));
    if (nodes_[id].rg)
      nodes_[id].back = [this, id, xs, inv] {
        const double d = nodes_[id].grad.v[0] * inv;
        for (NodeId x : xs)
          if (nodes_[x].rg) nodes_[x].grad.v[0] += d;
      };
    return id;
  }

  // Scalar projection sum(x * r); reduces any output to a scalar for
  // finite-difference checks.
  NodeId dot_with(NodeId x, Array r) {
    const Array& xv = nodes_[x].value;
    if (!xv.same_shape(r)) throw ValidationError("dot_with: shape mismatch");
    double acc = 0.0;
    for (std::size_t i = 0; i < xv.numel(); ++i) acc += xv.v[i] * r.v[i];
    const NodeId id = push(Array::scalar(acc), nodes_[x].rg);
    if (nodes_[id].rg)
      nodes_[id].back = [this, id, x, r = std::move(r)] {
        const double d = nodes_[id].grad.v[0];
        double* dx = nodes_[x].grad.v.data();
        for (std::size_t i = 0; i < r.numel(); ++i) dx[i] += d * r.v[i];
      };
    return id;
  }

  // Reverse sweep from a scalar root; flushes parameter gradients into the
  // bound Parameter objects (accumulating).
  void backward(NodeId root) {
    if (ran_backward_) throw ValidationError("graph: backward already ran");
    ran_backward_ = true;
    if (nodes_[root].value.numel() != 1)
      throw ValidationError("graph: backward root must be scalar");
    if (!nodes_[root].rg)
      throw ValidationError("graph: root does not require gradients");
    nodes_[root].grad.v[0] = 1.0;
    for (std::size_t i = root + 1; i-- > 0;) {
      Node& n = nodes_[i];
      if (n.rg && n.back) n.back();
    }
    for (auto& [p, id] : param_nodes_) {
      const Array& g = nodes_[id].grad;
      for (std::size_t i = 0; i < g.numel(); ++i) p->grad.v[i] += g.v[i];
    }
  }

 private:
  struct Node {
    Array value;
    Array grad;
    bool rg = false;
    std::function<void()> back;
  };

  NodeId push(Array value, bool rg) {
    Node n;
    n.value = std::move(value);
    n.rg = rg;
    if (rg) n.grad = Array(n.value.shape);
    nodes_.push_back(std::move(n));
    return nodes_.size() - 1;
  }

  bool any_rg(const std::vector<NodeId>& xs) const {
    for (NodeId x : xs)
      if (nodes_[x].rg) return true;
    return false;
  }

  std::vector<Node> nodes_;
  std::unordered_map<const Parameter*, NodeId> param_ids_;
  std::vector<std::pair<Parameter*, NodeId>> param_nodes_;
  bool ran_backward_ = false;
};

}  // namespace roadseq::nn
