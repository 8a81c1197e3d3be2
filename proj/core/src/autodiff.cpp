#include "biomorph/autodiff.hpp"

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace biomorph {

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MatMap = Eigen::Map<RowMat>;
using ConstMatMap = Eigen::Map<const RowMat>;

namespace {

ConstMatMap as_matrix(const Tensor& t) { return ConstMatMap(t.ptr(), t.rows(), t.cols()); }
MatMap as_matrix(Tensor& t) { return MatMap(t.ptr(), t.rows(), t.cols()); }

Tape& tape_of(const Var& v) {
  if (v.tape == nullptr) throw std::logic_error("variable is not attached to a tape");
  return *v.tape;
}

Tape& common_tape(const Var& a, const Var& b) {
  if (a.tape != b.tape) throw std::logic_error("operands belong to different tapes");
  return tape_of(a);
}

void add_into(Tensor& dst, const Tensor& src) {
  auto d = dst.data();
  auto s = src.data();
  for (std::size_t i = 0; i < d.size(); ++i) d[i] += s[i];
}

bool is_row_of(const Tensor& row, const Tensor& full) {
  return row.size() == full.cols() && row.cols() == full.cols();
}

std::string mismatch(const char* op, const Tensor& a, const Tensor& b) {
  return std::string(op) + ": shape mismatch " + shape_to_string(a.shape()) + " vs " + shape_to_string(b.shape());
}

}  // namespace

Param::Param(std::string n, Tensor v) : name(std::move(n)), value(std::move(v)), grad(value.shape(), 0.0) {}

const Tensor& Var::value() const { return tape_of(*this).value(id); }

Var Tape::constant(Tensor value) {
  if (checked_mode()) value.check_finite("constant");
  nodes_.push_back(Node{std::move(value), {}, false, false, {}, nullptr});
  return Var{this, nodes_.size() - 1};
}

Var Tape::param(Param& p) {
  if (auto it = param_ids_.find(&p); it != param_ids_.end()) return Var{this, it->second};
  if (checked_mode()) p.value.check_finite(p.name.c_str());
  nodes_.push_back(Node{{}, {}, recording_, false, {}, &p});
  const auto id = nodes_.size() - 1;
  param_ids_.emplace(&p, id);
  return Var{this, id};
}

Var Tape::push(Tensor value, bool requires_grad, BackwardFn fn) {
  const bool track = recording_ && requires_grad;
  nodes_.push_back(Node{std::move(value), {}, track, false, track ? std::move(fn) : BackwardFn{}, nullptr});
  return Var{this, nodes_.size() - 1};
}

Tensor& Tape::grad(std::size_t id) {
  auto& node = nodes_.at(id);
  if (node.param != nullptr) {
    // Param leaves accumulate straight into Param::grad.
    if (!node.param->grad.same_shape(node.param->value)) node.param->grad = Tensor(node.param->value.shape(), 0.0);
    node.has_grad = true;
    return node.param->grad;
  }
  if (!node.has_grad) {
    const Tensor& v = node.param != nullptr ? node.param->value : node.value;
    if (node.grad.same_shape(v)) {
      node.grad.fill(0.0);
    } else {
      node.grad = Tensor(v.shape(), 0.0);
    }
    node.has_grad = true;
  }
  return node.grad;
}

const Tensor* Tape::grad_if_any(std::size_t id) const {
  const auto& node = nodes_.at(id);
  if (!node.has_grad) return nullptr;
  return node.param != nullptr ? &node.param->grad : &node.grad;
}

void Tape::backward(const Var& loss) {
  if (loss.tape != this) throw std::logic_error("backward: loss belongs to another tape");
  const auto& root = nodes_.at(loss.id);
  if (value(loss.id).size() != 1) {
    throw ShapeError("backward requires a scalar loss, got shape " + shape_to_string(value(loss.id).shape()));
  }
  if (!recording_ || !root.requires_grad) {
    throw std::logic_error("backward: no recorded computation reaches this loss");
  }
  for (auto& node : nodes_) node.has_grad = false;
  grad(loss.id)[0] += 1.0;
  for (std::size_t id = loss.id + 1; id-- > 0;) {
    auto& node = nodes_[id];
    if (!node.has_grad) continue;
    if (node.backward) node.backward(*this, id);
  }
}

std::uint64_t mix_seed(std::uint64_t a, std::uint64_t b) noexcept {
  // splitmix64 finalizer over a combined word
  std::uint64_t z = a + 0x9E3779B97F4A7C15ULL * (b + 1);
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
  return z ^ (z >> 31);
}

double uniform_from_hash(std::uint64_t h) noexcept { return static_cast<double>(h >> 11) * 0x1.0p-53; }

namespace ad {

Var matmul(const Var& a, const Var& b) {
  Tape& tape = common_tape(a, b);
  const Tensor& av = a.value();
  const Tensor& bv = b.value();
  if (av.cols() != bv.rows() || bv.rank() > 2) throw ShapeError(mismatch("matmul", av, bv));
  Tensor out({av.rows(), bv.cols()}, 0.0);
  as_matrix(out).noalias() = as_matrix(av) * as_matrix(bv);
  if (checked_mode()) out.check_finite("matmul");
  const bool ga = tape.requires_grad(a.id);
  const bool gb = tape.requires_grad(b.id);
  return tape.push(std::move(out), ga || gb, [ia = a.id, ib = b.id, ga, gb](Tape& t, std::size_t self) {
    const auto dy = as_matrix(t.grad(self));
    if (ga) as_matrix(t.grad(ia)).noalias() += dy * as_matrix(t.value(ib)).transpose();
    if (gb) as_matrix(t.grad(ib)).noalias() += as_matrix(t.value(ia)).transpose() * dy;
  });
}

Var transpose(const Var& a) {
  Tape& tape = tape_of(a);
  const Tensor& av = a.value();
  if (av.rank() != 2) throw ShapeError("transpose: expected rank 2, got " + shape_to_string(av.shape()));
  Tensor out({av.cols(), av.rows()}, 0.0);
  as_matrix(out) = as_matrix(av).transpose();
  return tape.push(std::move(out), tape.requires_grad(a.id), [ia = a.id](Tape& t, std::size_t self) {
    as_matrix(t.grad(ia)) += as_matrix(t.grad(self)).transpose();
  });
}

Var add(const Var& a, const Var& b) {
  Tape& tape = common_tape(a, b);
  const Tensor& av = a.value();
  const Tensor& bv = b.value();
  const bool broadcast = !av.same_shape(bv);
  if (broadcast && !is_row_of(bv, av)) throw ShapeError(mismatch("add", av, bv));
  Tensor out = av;
  const std::size_t cols = av.cols();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] += bv[broadcast ? i % cols : i];
  if (checked_mode()) out.check_finite("add");
  const bool ga = tape.requires_grad(a.id);
  const bool gb = tape.requires_grad(b.id);
  return tape.push(std::move(out), ga || gb,
                   [ia = a.id, ib = b.id, ga, gb, broadcast, cols](Tape& t, std::size_t self) {
                     const Tensor& dy = t.grad(self);
                     if (ga) add_into(t.grad(ia), dy);
                     if (gb) {
                       Tensor& db = t.grad(ib);
                       if (broadcast) {
                         for (std::size_t i = 0; i < dy.size(); ++i) db[i % cols] += dy[i];
                       } else {
                         add_into(db, dy);
                       }
                     }
                   });
}

Var mul(const Var& a, const Var& b) {
  Tape& tape = common_tape(a, b);
  const Tensor& av = a.value();
  const Tensor& bv = b.value();
  const bool broadcast = !av.same_shape(bv);
  if (broadcast && !is_row_of(bv, av)) throw ShapeError(mismatch("mul", av, bv));
  Tensor out = av;
  const std::size_t cols = av.cols();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] *= bv[broadcast ? i % cols : i];
  if (checked_mode()) out.check_finite("mul");
  const bool ga = tape.requires_grad(a.id);
  const bool gb = tape.requires_grad(b.id);
  return tape.push(std::move(out), ga || gb,
                   [ia = a.id, ib = b.id, ga, gb, broadcast, cols](Tape& t, std::size_t self) {
                     const Tensor& dy = t.grad(self);
                     const Tensor& x = t.value(ia);
                     const Tensor& y = t.value(ib);
                     if (ga) {
                       Tensor& da = t.grad(ia);
                       for (std::size_t i = 0; i < dy.size(); ++i) da[i] += dy[i] * y[broadcast ? i % cols : i];
                     }
                     if (gb) {
                       Tensor& db = t.grad(ib);
                       for (std::size_t i = 0; i < dy.size(); ++i) db[broadcast ? i % cols : i] += dy[i] * x[i];
                     }
                   });
}

Var scale(const Var& a, double factor) {
  Tape& tape = tape_of(a);
  Tensor out = a.value();
  for (auto& v : out.data()) v *= factor;
  if (checked_mode()) out.check_finite("scale");
  return tape.push(std::move(out), tape.requires_grad(a.id), [ia = a.id, factor](Tape& t, std::size_t self) {
    const Tensor& dy = t.grad(self);
    Tensor& da = t.grad(ia);
    for (std::size_t i = 0; i < dy.size(); ++i) da[i] += factor * dy[i];
  });
}

Var relu(const Var& a) {
  Tape& tape = tape_of(a);
  Tensor out = a.value();
  for (auto& v : out.data()) v = v > 0.0 ? v : 0.0;
  return tape.push(std::move(out), tape.requires_grad(a.id), [ia = a.id](Tape& t, std::size_t self) {
    const Tensor& dy = t.grad(self);
    const Tensor& x = t.value(ia);
    Tensor& da = t.grad(ia);
    // subgradient at exactly zero is zero
    for (std::size_t i = 0; i < dy.size(); ++i) {
      if (x[i] > 0.0) da[i] += dy[i];
    }
  });
}

Var layer_norm(const Var& a, double eps) {
  Tape& tape = tape_of(a);
  const Tensor& x = a.value();
  const std::size_t rows = x.rows();
  const std::size_t cols = x.cols();
  Tensor out(x.shape(), 0.0);
  std::vector<double> inv_std(rows);
  for (std::size_t r = 0; r < rows; ++r) {
    const double* xr = x.ptr() + r * cols;
    double mu = 0.0;
    for (std::size_t c = 0; c < cols; ++c) mu += xr[c];
    mu /= static_cast<double>(cols);
    double var = 0.0;
    for (std::size_t c = 0; c < cols; ++c) var += (xr[c] - mu) * (xr[c] - mu);
    var /= static_cast<double>(cols);
    inv_std[r] = 1.0 / std::sqrt(var + eps);
    double* yr = out.ptr() + r * cols;
    for (std::size_t c = 0; c < cols; ++c) yr[c] = (xr[c] - mu) * inv_std[r];
  }
  return tape.push(std::move(out), tape.requires_grad(a.id),
                   [ia = a.id, inv_std = std::move(inv_std), rows, cols](Tape& t, std::size_t self) {
                     const Tensor& dy = t.grad(self);
                     const Tensor& y = t.value(self);
                     Tensor& dx = t.grad(ia);
                     const double n = static_cast<double>(cols);
                     for (std::size_t r = 0; r < rows; ++r) {
                       const double* g = dy.ptr() + r * cols;
                       const double* yr = y.ptr() + r * cols;
                       double mg = 0.0;
                       double mgy = 0.0;
                       for (std::size_t c = 0; c < cols; ++c) {
                         mg += g[c];
                         mgy += g[c] * yr[c];
                       }
                       mg /= n;
                       mgy /= n;
                       double* d = dx.ptr() + r * cols;
                       for (std::size_t c = 0; c < cols; ++c) d[c] += inv_std[r] * (g[c] - mg - yr[c] * mgy);
                     }
                   });
}

Var softmax(const Var& a) {
  Tape& tape = tape_of(a);
  const Tensor& x = a.value();
  const std::size_t rows = x.rows();
  const std::size_t cols = x.cols();
  Tensor out(x.shape(), 0.0);
  for (std::size_t r = 0; r < rows; ++r) {
    const double* xr = x.ptr() + r * cols;
    double* yr = out.ptr() + r * cols;
    const double mx = *std::max_element(xr, xr + cols);
    double z = 0.0;
    for (std::size_t c = 0; c < cols; ++c) {
      yr[c] = std::exp(xr[c] - mx);
      z += yr[c];
    }
    for (std::size_t c = 0; c < cols; ++c) yr[c] /= z;
  }
  // A singleton row is identically 1, so its gradient is exactly zero.
  const bool track = tape.requires_grad(a.id) && cols > 1;
  return tape.push(std::move(out), track, [ia = a.id, rows, cols](Tape& t, std::size_t self) {
    const Tensor& dy = t.grad(self);
    const Tensor& y = t.value(self);
    Tensor& dx = t.grad(ia);
    for (std::size_t r = 0; r < rows; ++r) {
      const double* g = dy.ptr() + r * cols;
      const double* yr = y.ptr() + r * cols;
      double dot = 0.0;
      for (std::size_t c = 0; c < cols; ++c) dot += g[c] * yr[c];
      double* d = dx.ptr() + r * cols;
      for (std::size_t c = 0; c < cols; ++c) d[c] += yr[c] * (g[c] - dot);
    }
  });
}

Var dropout(const Var& a, double rate, Mode mode, std::uint64_t seed) {
  if (!(rate >= 0.0 && rate < 1.0)) throw std::invalid_argument("dropout: rate must lie in [0, 1)");
  if (mode == Mode::eval || rate == 0.0) return a;
  Tape& tape = tape_of(a);
  const Tensor& x = a.value();
  const double keep_scale = 1.0 / (1.0 - rate);
  std::vector<double> mask(x.size());
  Tensor out = x;
  for (std::size_t i = 0; i < x.size(); ++i) {
    mask[i] = uniform_from_hash(mix_seed(seed, i)) >= rate ? keep_scale : 0.0;
    out[i] *= mask[i];
  }
  return tape.push(std::move(out), tape.requires_grad(a.id),
                   [ia = a.id, mask = std::move(mask)](Tape& t, std::size_t self) {
                     const Tensor& dy = t.grad(self);
                     Tensor& dx = t.grad(ia);
                     for (std::size_t i = 0; i < dy.size(); ++i) dx[i] += dy[i] * mask[i];
                   });
}

Var mse(const Var& a, const Var& b) {
  Tape& tape = common_tape(a, b);
  const Tensor& av = a.value();
  const Tensor& bv = b.value();
  if (av.size() != bv.size()) throw ShapeError(mismatch("mse", av, bv));
  double acc = 0.0;
  for (std::size_t i = 0; i < av.size(); ++i) acc += (av[i] - bv[i]) * (av[i] - bv[i]);
  const double n = static_cast<double>(av.size());
  const bool ga = tape.requires_grad(a.id);
  const bool gb = tape.requires_grad(b.id);
  return tape.push(Tensor({1}, acc / n), ga || gb, [ia = a.id, ib = b.id, ga, gb, n](Tape& t, std::size_t self) {
    const double g = t.grad(self)[0];
    const Tensor& x = t.value(ia);
    const Tensor& y = t.value(ib);
    if (ga) {
      Tensor& da = t.grad(ia);
      for (std::size_t i = 0; i < x.size(); ++i) da[i] += 2.0 * g * (x[i] - y[i]) / n;
    }
    if (gb) {
      Tensor& db = t.grad(ib);
      for (std::size_t i = 0; i < x.size(); ++i) db[i] -= 2.0 * g * (x[i] - y[i]) / n;
    }
  });
}

Var concat(const std::vector<Var>& parts) {
  if (parts.empty()) throw std::invalid_argument("concat: no inputs");
  Tape& tape = tape_of(parts.front());
  const std::size_t rows = parts.front().value().rows();
  std::vector<std::size_t> widths;
  std::size_t total = 0;
  bool track = false;
  for (const auto& p : parts) {
    if (p.tape != &tape) throw std::logic_error("concat: operands belong to different tapes");
    if (p.value().rows() != rows) throw ShapeError(mismatch("concat", parts.front().value(), p.value()));
    widths.push_back(p.value().cols());
    total += widths.back();
    track = track || tape.requires_grad(p.id);
  }
  Tensor out(parts.front().value().rank() == 1 ? Shape{total} : Shape{rows, total}, 0.0);
  std::size_t offset = 0;
  for (std::size_t k = 0; k < parts.size(); ++k) {
    const Tensor& src = parts[k].value();
    for (std::size_t r = 0; r < rows; ++r) {
      std::copy_n(src.ptr() + r * widths[k], widths[k], out.ptr() + r * total + offset);
    }
    offset += widths[k];
  }
  std::vector<std::size_t> ids;
  for (const auto& p : parts) ids.push_back(p.id);
  return tape.push(std::move(out), track, [ids, widths, rows, total](Tape& t, std::size_t self) {
    const Tensor& dy = t.grad(self);
    std::size_t off = 0;
    for (std::size_t k = 0; k < ids.size(); ++k) {
      if (t.requires_grad(ids[k])) {
        Tensor& dx = t.grad(ids[k]);
        for (std::size_t r = 0; r < rows; ++r) {
          for (std::size_t c = 0; c < widths[k]; ++c) dx[r * widths[k] + c] += dy[r * total + off + c];
        }
      }
      off += widths[k];
    }
  });
}

Var stack_rows(const std::vector<Var>& parts) {
  if (parts.empty()) throw std::invalid_argument("stack_rows: no inputs");
  Tape& tape = tape_of(parts.front());
  const Tensor& first = parts.front().value();
  const std::size_t rows = first.rows();
  const std::size_t cols = first.cols();
  const std::size_t k = parts.size();
  bool track = false;
  for (const auto& p : parts) {
    if (p.tape != &tape) throw std::logic_error("stack_rows: operands belong to different tapes");
    if (p.value().rows() != rows || p.value().cols() != cols) throw ShapeError(mismatch("stack_rows", first, p.value()));
    track = track || tape.requires_grad(p.id);
  }
  Tensor out({rows * k, cols}, 0.0);
  for (std::size_t j = 0; j < k; ++j) {
    const Tensor& src = parts[j].value();
    for (std::size_t r = 0; r < rows; ++r) std::copy_n(src.ptr() + r * cols, cols, out.ptr() + (r * k + j) * cols);
  }
  std::vector<std::size_t> ids;
  for (const auto& p : parts) ids.push_back(p.id);
  return tape.push(std::move(out), track, [ids, rows, cols, k](Tape& t, std::size_t self) {
    const Tensor& dy = t.grad(self);
    for (std::size_t j = 0; j < k; ++j) {
      if (!t.requires_grad(ids[j])) continue;
      Tensor& dx = t.grad(ids[j]);
      for (std::size_t r = 0; r < rows; ++r) {
        const double* src = dy.ptr() + (r * k + j) * cols;
        double* dst = dx.ptr() + r * cols;
        for (std::size_t c = 0; c < cols; ++c) dst[c] += src[c];
      }
    }
  });
}

Var weighted_sum(const Var& weights, const Var& stacked) {
  Tape& tape = common_tape(weights, stacked);
  const Tensor& w = weights.value();
  const Tensor& x = stacked.value();
  const std::size_t batch = w.rows();
  const std::size_t k = w.cols();
  const std::size_t cols = x.cols();
  if (x.rows() != batch * k) throw ShapeError(mismatch("weighted_sum", w, x));
  Tensor out(w.rank() == 1 ? Shape{cols} : Shape{batch, cols}, 0.0);
  for (std::size_t b = 0; b < batch; ++b) {
    double* dst = out.ptr() + b * cols;
    for (std::size_t j = 0; j < k; ++j) {
      const double wj = w[b * k + j];
      const double* src = x.ptr() + (b * k + j) * cols;
      for (std::size_t c = 0; c < cols; ++c) dst[c] += wj * src[c];
    }
  }
  const bool gw = tape.requires_grad(weights.id);
  const bool gx = tape.requires_grad(stacked.id);
  return tape.push(std::move(out), gw || gx,
                   [iw = weights.id, ix = stacked.id, gw, gx, batch, k, cols](Tape& t, std::size_t self) {
                     const Tensor& dy = t.grad(self);
                     const Tensor& wv = t.value(iw);
                     const Tensor& xv = t.value(ix);
                     double* dw = gw ? t.grad(iw).ptr() : nullptr;
                     double* dx = gx ? t.grad(ix).ptr() : nullptr;
                     for (std::size_t b = 0; b < batch; ++b) {
                       const double* g = dy.ptr() + b * cols;
                       for (std::size_t j = 0; j < k; ++j) {
                         const std::size_t row = b * k + j;
                         if (gw) {
                           double acc = 0.0;
                           const double* src = xv.ptr() + row * cols;
                           for (std::size_t c = 0; c < cols; ++c) acc += g[c] * src[c];
                           dw[b * k + j] += acc;
                         }
                         if (gx) {
                           double* dst = dx + row * cols;
                           const double wj = wv[b * k + j];
                           for (std::size_t c = 0; c < cols; ++c) dst[c] += wj * g[c];
                         }
                       }
                     }
                   });
}

Var sum(const Var& a) {
  Tape& tape = tape_of(a);
  double acc = 0.0;
  for (double v : a.value().data()) acc += v;
  return tape.push(Tensor({1}, acc), tape.requires_grad(a.id), [ia = a.id](Tape& t, std::size_t self) {
    const double g = t.grad(self)[0];
    for (auto& v : t.grad(ia).data()) v += g;
  });
}

Var mean(const Var& a) { return scale(sum(a), 1.0 / static_cast<double>(a.value().size())); }

Var reshape(const Var& a, Shape shape) {
  Tape& tape = tape_of(a);
  if (shape_numel(shape) != a.value().size()) {
    throw ShapeError("reshape: cannot view " + shape_to_string(a.value().shape()) + " as " + shape_to_string(shape));
  }
  Tensor out(std::move(shape), a.value().storage());
  return tape.push(std::move(out), tape.requires_grad(a.id), [ia = a.id](Tape& t, std::size_t self) {
    const Tensor& dy = t.grad(self);
    Tensor& dx = t.grad(ia);
    for (std::size_t i = 0; i < dy.size(); ++i) dx[i] += dy[i];
  });
}

Var index_sum(const Var& a, const std::vector<std::vector<std::size_t>>& sets) {
  Tape& tape = tape_of(a);
  const Tensor& x = a.value();
  const std::size_t rows = x.rows();
  const std::size_t d = x.cols();
  const std::size_t k = sets.size();
  if (k == 0) throw std::invalid_argument("index_sum: no index sets");
  for (const auto& s : sets) {
    for (auto i : s) {
      if (i >= d) throw ShapeError("index_sum: index " + std::to_string(i) + " out of range for width " + std::to_string(d));
    }
  }
  Tensor out(x.rank() == 1 ? Shape{k} : Shape{rows, k}, 0.0);
  for (std::size_t r = 0; r < rows; ++r) {
    for (std::size_t j = 0; j < k; ++j) {
      double acc = 0.0;
      for (auto i : sets[j]) acc += x[r * d + i];
      out[r * k + j] = acc;
    }
  }
  return tape.push(std::move(out), tape.requires_grad(a.id), [ia = a.id, sets, rows, d, k](Tape& t, std::size_t self) {
    const Tensor& dy = t.grad(self);
    Tensor& dx = t.grad(ia);
    for (std::size_t r = 0; r < rows; ++r) {
      for (std::size_t j = 0; j < k; ++j) {
        for (auto i : sets[j]) dx[r * d + i] += dy[r * k + j];
      }
    }
  });
}

Var gather_rows(const Var& table, const std::vector<std::vector<std::size_t>>& index) {
  Tape& tape = tape_of(table);
  const Tensor& w = table.value();
  const std::size_t rows = w.rows();
  const std::size_t d = w.cols();
  if (index.size() != rows || index.empty()) {
    throw ShapeError("gather_rows: " + std::to_string(index.size()) + " index rows for table " + shape_to_string(w.shape()));
  }
  const std::size_t k = index.front().size();
  for (const auto& row : index) {
    if (row.size() != k || k == 0) throw ShapeError("gather_rows: ragged or empty index rows");
    for (auto i : row) {
      if (i >= d) throw ShapeError("gather_rows: index out of range");
    }
  }
  Tensor out({rows, k}, 0.0);
  for (std::size_t r = 0; r < rows; ++r) {
    for (std::size_t s = 0; s < k; ++s) out[r * k + s] = w[r * d + index[r][s]];
  }
  return tape.push(std::move(out), tape.requires_grad(table.id),
                   [iw = table.id, index, rows, d, k](Tape& t, std::size_t self) {
                     const Tensor& dy = t.grad(self);
                     Tensor& dw = t.grad(iw);
                     for (std::size_t r = 0; r < rows; ++r) {
                       for (std::size_t s = 0; s < k; ++s) dw[r * d + index[r][s]] += dy[r * k + s];
                     }
                   });
}

Var sparse_mix(const Var& values, const Var& weights, const std::vector<std::vector<std::size_t>>& index) {
  Tape& tape = common_tape(values, weights);
  const Tensor& g = values.value();
  const Tensor& a = weights.value();
  const std::size_t batch = g.rows();
  const std::size_t d = g.cols();
  const std::size_t paths = a.rows();
  const std::size_t k = a.cols();
  if (index.size() != paths) throw ShapeError(mismatch("sparse_mix", g, a));
  for (const auto& row : index) {
    if (row.size() != k) throw ShapeError("sparse_mix: index rows must match weight width");
    for (auto i : row) {
      if (i >= d) throw ShapeError("sparse_mix: index out of range");
    }
  }
  Tensor out(g.rank() == 1 ? Shape{paths} : Shape{batch, paths}, 0.0);
  for (std::size_t b = 0; b < batch; ++b) {
    const double* gb = g.ptr() + b * d;
    for (std::size_t i = 0; i < paths; ++i) {
      double acc = 0.0;
      for (std::size_t s = 0; s < k; ++s) acc += a[i * k + s] * gb[index[i][s]];
      out[b * paths + i] = acc;
    }
  }
  const bool gg = tape.requires_grad(values.id);
  const bool ga = tape.requires_grad(weights.id);
  return tape.push(std::move(out), gg || ga,
                   [ig = values.id, iwt = weights.id, gg, ga, index, batch, d, paths, k](Tape& t, std::size_t self) {
                     const Tensor& dy = t.grad(self);
                     const Tensor& gv = t.value(ig);
                     const Tensor& av = t.value(iwt);
                     double* da = ga ? t.grad(iwt).ptr() : nullptr;
                     double* dg = gg ? t.grad(ig).ptr() : nullptr;
                     for (std::size_t b = 0; b < batch; ++b) {
                       for (std::size_t i = 0; i < paths; ++i) {
                         const double up = dy[b * paths + i];
                         if (up == 0.0) continue;
                         for (std::size_t s = 0; s < k; ++s) {
                           const std::size_t j = index[i][s];
                           if (ga) da[i * k + s] += up * gv[b * d + j];
                           if (gg) dg[b * d + j] += up * av[i * k + s];
                         }
                       }
                     }
                   });
}

Var attention(const Var& q, const Var& k, const Var& v, std::size_t tokens) {
  Tape& tape = common_tape(q, k);
  if (v.tape != &tape) throw std::logic_error("attention: operands belong to different tapes");
  const Tensor& qv = q.value();
  const Tensor& kv = k.value();
  const Tensor& vv = v.value();
  if (!qv.same_shape(kv)) throw ShapeError(mismatch("attention", qv, kv));
  if (!qv.same_shape(vv)) throw ShapeError(mismatch("attention", qv, vv));
  if (tokens == 0 || qv.cols() % tokens != 0) throw ShapeError("attention: width not divisible by token count");
  const std::size_t rows = qv.rows();
  const std::size_t dh = qv.cols() / tokens;
  const double inv_sqrt = 1.0 / std::sqrt(static_cast<double>(dh));
  const std::size_t tt = tokens * tokens;
  std::vector<double> probs(rows * tt);
  Tensor out(qv.shape(), 0.0);
  for (std::size_t r = 0; r < rows; ++r) {
    const double* qr = qv.ptr() + r * qv.cols();
    const double* kr = kv.ptr() + r * qv.cols();
    const double* vr = vv.ptr() + r * qv.cols();
    double* pr = probs.data() + r * tt;
    double* orow = out.ptr() + r * qv.cols();
    for (std::size_t i = 0; i < tokens; ++i) {
      double* p = pr + i * tokens;
      double mx = -INFINITY;
      for (std::size_t j = 0; j < tokens; ++j) {
        double s = 0.0;
        for (std::size_t c = 0; c < dh; ++c) s += qr[i * dh + c] * kr[j * dh + c];
        p[j] = s * inv_sqrt;
        mx = std::max(mx, p[j]);
      }
      double z = 0.0;
      for (std::size_t j = 0; j < tokens; ++j) {
        p[j] = std::exp(p[j] - mx);
        z += p[j];
      }
      for (std::size_t j = 0; j < tokens; ++j) {
        p[j] /= z;
        for (std::size_t c = 0; c < dh; ++c) orow[i * dh + c] += p[j] * vr[j * dh + c];
      }
    }
  }
  // With a single token the attention weight is identically 1: no gradient reaches q or k.
  const bool gq = tape.requires_grad(q.id) && tokens > 1;
  const bool gk = tape.requires_grad(k.id) && tokens > 1;
  const bool gv = tape.requires_grad(v.id);
  return tape.push(std::move(out), gq || gk || gv,
                   [iq = q.id, ik = k.id, iv = v.id, gq, gk, gv, probs = std::move(probs), rows, tokens, dh,
                    inv_sqrt](Tape& t, std::size_t self) {
                     const Tensor& dy = t.grad(self);
                     const Tensor& qv = t.value(iq);
                     const Tensor& kv = t.value(ik);
                     const Tensor& vv = t.value(iv);
                     const std::size_t width = tokens * dh;
                     std::vector<double> dp(tokens);
                     double* dq = gq ? t.grad(iq).ptr() : nullptr;
                     double* dk = gk ? t.grad(ik).ptr() : nullptr;
                     double* dvv = gv ? t.grad(iv).ptr() : nullptr;
                     for (std::size_t r = 0; r < rows; ++r) {
                       const double* pr = probs.data() + r * tokens * tokens;
                       const double* g = dy.ptr() + r * width;
                       for (std::size_t i = 0; i < tokens; ++i) {
                         const double* p = pr + i * tokens;
                         if (gv) {
                           double* dv = dvv + r * width;
                           for (std::size_t j = 0; j < tokens; ++j) {
                             for (std::size_t c = 0; c < dh; ++c) dv[j * dh + c] += p[j] * g[i * dh + c];
                           }
                         }
                         if (!gq && !gk) continue;
                         double dot = 0.0;
                         for (std::size_t j = 0; j < tokens; ++j) {
                           double s = 0.0;
                           for (std::size_t c = 0; c < dh; ++c) s += g[i * dh + c] * vv[r * width + j * dh + c];
                           dp[j] = s;
                           dot += s * p[j];
                         }
                         for (std::size_t j = 0; j < tokens; ++j) {
                           const double ds = p[j] * (dp[j] - dot) * inv_sqrt;
                           for (std::size_t c = 0; c < dh; ++c) {
                             if (gq) dq[r * width + i * dh + c] += ds * kv[r * width + j * dh + c];
                             if (gk) dk[r * width + j * dh + c] += ds * qv[r * width + i * dh + c];
                           }
                         }
                       }
                     }
                   });
}

Var weighted_cross_entropy(const Var& logits, const std::vector<std::size_t>& labels,
                           const std::vector<double>& class_weights) {
  Tape& tape = tape_of(logits);
  const Tensor& z = logits.value();
  const std::size_t rows = z.rows();
  const std::size_t classes = z.cols();
  if (labels.size() != rows) throw ShapeError("weighted_cross_entropy: label count does not match batch");
  if (class_weights.size() != classes) throw ShapeError("weighted_cross_entropy: weight count does not match classes");
  std::vector<double> probs(rows * classes);
  double total = 0.0;
  for (std::size_t r = 0; r < rows; ++r) {
    if (labels[r] >= classes) throw std::out_of_range("weighted_cross_entropy: label out of range");
    const double* zr = z.ptr() + r * classes;
    const double mx = *std::max_element(zr, zr + classes);
    double s = 0.0;
    for (std::size_t c = 0; c < classes; ++c) s += std::exp(zr[c] - mx);
    const double lse = mx + std::log(s);
    for (std::size_t c = 0; c < classes; ++c) probs[r * classes + c] = std::exp(zr[c] - lse);
    total += class_weights[labels[r]] * (lse - zr[labels[r]]);
  }
  const double n = static_cast<double>(rows);
  return tape.push(Tensor({1}, total / n), tape.requires_grad(logits.id),
                   [iz = logits.id, probs = std::move(probs), labels, class_weights, rows, classes, n](Tape& t,
                                                                                                      std::size_t self) {
                     const double g = t.grad(self)[0];
                     Tensor& dz = t.grad(iz);
                     for (std::size_t r = 0; r < rows; ++r) {
                       const double w = class_weights[labels[r]] * g / n;
                       for (std::size_t c = 0; c < classes; ++c) {
                         const double target = c == labels[r] ? 1.0 : 0.0;
                         dz[r * classes + c] += w * (probs[r * classes + c] - target);
                       }
                     }
                   });
}

}  // namespace ad
}  // namespace biomorph
