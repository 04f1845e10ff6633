#include "plab/tape.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <limits>
#include <memory>

#include "plab/kernels.hpp"

namespace plab {

namespace {

constexpr double kInvSqrt2 = 0.7071067811865475244008443621048490393;
constexpr double kInvSqrt2Pi = 0.3989422804014326779399460599343818685;

void transpose_raw(double* dst, const double* src, std::int64_t r, std::int64_t c) {
    for (std::int64_t i = 0; i < r; ++i) {
        for (std::int64_t j = 0; j < c; ++j) {
            dst[j * r + i] = src[i * c + j];
        }
    }
}

double dot_seq(const double* a, const double* b, std::int64_t n) {
    double acc = 0.0;
    for (std::int64_t i = 0; i < n; ++i) acc += a[i] * b[i];
    return acc;
}

double norm_seq(const double* a, std::int64_t n) {
    return std::sqrt(dot_seq(a, a, n));
}

// Row cosine against a fixed query; zero-norm rows (or query) count as -1,
// matching the retrieval convention, and get no gradient.
double cosine_or_neg1(const double* q, double qn, const double* k,
                      std::int64_t n, double* kn_out) {
    const double kn = norm_seq(k, n);
    if (kn_out) *kn_out = kn;
    if (qn == 0.0 || kn == 0.0) return -1.0;
    return dot_seq(q, k, n) / (qn * kn);
}

}  // namespace

void Tape::check_id(Id id, const char* op) const {
    if (id < 0 || static_cast<std::size_t>(id) >= slots_.size()) {
        throw Error(std::string(op) + ": id not on this tape");
    }
}

std::vector<double>& Tape::gbuf(Id id) {
    Slot& s = slots_[id];
    if (s.leaf) return s.leaf->grad;
    if (s.gradbuf.empty()) s.gradbuf.assign(v(id).data.size(), 0.0);
    return s.gradbuf;
}

Id Tape::add_result(Tensor out, bool needs, const char* op) {
    out.check_finite(op);
    Slot s;
    s.owned = std::move(out);
    s.needs = needs;
    slots_.push_back(std::move(s));
    return static_cast<Id>(slots_.size() - 1);
}

Id Tape::leaf(Tensor& t) {
    if (!t.requires_grad) throw Error("leaf: tensor does not require grad");
    if (t.grad.size() != t.data.size()) t.grad.assign(t.data.size(), 0.0);
    t.check_finite("leaf");
    Slot s;
    s.ext = &t;
    s.leaf = &t;
    s.needs = true;
    slots_.push_back(std::move(s));
    return static_cast<Id>(slots_.size() - 1);
}

Id Tape::input(const Tensor& t) {
    t.check_finite("input");
    Slot s;
    s.ext = &t;
    s.needs = false;
    slots_.push_back(std::move(s));
    return static_cast<Id>(slots_.size() - 1);
}

Id Tape::constant(Tensor t) {
    t.check_finite("constant");
    Slot s;
    s.owned = std::move(t);
    s.needs = false;
    slots_.push_back(std::move(s));
    return static_cast<Id>(slots_.size() - 1);
}

Id Tape::matmul(Id a, Id b) {
    check_id(a, "matmul");
    check_id(b, "matmul");
    const Tensor& A = v(a);
    const Tensor& B = v(b);
    if (A.shape.size() > 2 || B.shape.size() > 2) {
        throw Error("matmul: operands must be rank <= 2");
    }
    const std::int64_t m = A.rows(), k = A.cols(), n = B.cols();
    if (k != B.rows()) {
        throw Error("matmul: inner dimensions mismatch " + A.shape_str() + " x " +
                    B.shape_str());
    }
    Tensor out = Tensor::zeros({m, n});
    active_kernels().matmul(out.data.data(), A.data.data(), B.data.data(), m, k,
                            n, false);
    const bool needs = slots_[a].needs || slots_[b].needs;
    const Id o = add_result(std::move(out), needs, "matmul");
    if (needs) {
        nodes_.push_back([this, a, b, o, m, k, n]() {
            const std::vector<double>& go = gbuf(o);
            const Kernels& K = active_kernels();
            if (slots_[a].needs) {
                std::vector<double> bT(static_cast<std::size_t>(k * n));
                transpose_raw(bT.data(), v(b).data.data(), k, n);
                K.matmul(gbuf(a).data(), go.data(), bT.data(), m, n, k, true);
            }
            if (slots_[b].needs) {
                std::vector<double> aT(static_cast<std::size_t>(m * k));
                transpose_raw(aT.data(), v(a).data.data(), m, k);
                K.matmul(gbuf(b).data(), aT.data(), go.data(), k, m, n, true);
            }
        });
    }
    return o;
}

Id Tape::add(Id a, Id b) {
    check_id(a, "add");
    check_id(b, "add");
    const Tensor& A = v(a);
    const Tensor& B = v(b);
    if (!A.same_shape(B)) {
        throw Error("add: shape mismatch " + A.shape_str() + " vs " + B.shape_str());
    }
    Tensor out = Tensor::zeros(A.shape);
    active_kernels().add(out.data.data(), A.data.data(), B.data.data(), A.numel());
    const bool needs = slots_[a].needs || slots_[b].needs;
    const Id o = add_result(std::move(out), needs, "add");
    if (needs) {
        nodes_.push_back([this, a, b, o]() {
            const std::vector<double>& go = gbuf(o);
            const Kernels& K = active_kernels();
            const std::int64_t n = static_cast<std::int64_t>(go.size());
            if (slots_[a].needs) K.axpy(gbuf(a).data(), 1.0, go.data(), n);
            if (slots_[b].needs) K.axpy(gbuf(b).data(), 1.0, go.data(), n);
        });
    }
    return o;
}

Id Tape::scale(Id a, double alpha) {
    check_id(a, "scale");
    const Tensor& A = v(a);
    Tensor out = Tensor::zeros(A.shape);
    active_kernels().scale(out.data.data(), A.data.data(), alpha, A.numel());
    const bool needs = slots_[a].needs;
    const Id o = add_result(std::move(out), needs, "scale");
    if (needs) {
        nodes_.push_back([this, a, o, alpha]() {
            const std::vector<double>& go = gbuf(o);
            active_kernels().axpy(gbuf(a).data(), alpha, go.data(),
                                  static_cast<std::int64_t>(go.size()));
        });
    }
    return o;
}

Id Tape::add_row_bias(Id x, Id bias) {
    check_id(x, "add_row_bias");
    check_id(bias, "add_row_bias");
    const Tensor& X = v(x);
    const Tensor& B = v(bias);
    const std::int64_t rows = X.rows(), cols = X.cols();
    if (B.numel() != cols) {
        throw Error("add_row_bias: bias length " + B.shape_str() +
                    " does not match row width " + X.shape_str());
    }
    Tensor out = Tensor::zeros(X.shape);
    for (std::int64_t i = 0; i < rows; ++i) {
        active_kernels().add(out.data.data() + i * cols, X.data.data() + i * cols,
                             B.data.data(), cols);
    }
    const bool needs = slots_[x].needs || slots_[bias].needs;
    const Id o = add_result(std::move(out), needs, "add_row_bias");
    if (needs) {
        nodes_.push_back([this, x, bias, o, rows, cols]() {
            const std::vector<double>& go = gbuf(o);
            const Kernels& K = active_kernels();
            if (slots_[x].needs) {
                K.axpy(gbuf(x).data(), 1.0, go.data(), rows * cols);
            }
            if (slots_[bias].needs) {
                double* gb = gbuf(bias).data();
                for (std::int64_t i = 0; i < rows; ++i) {
                    K.axpy(gb, 1.0, go.data() + i * cols, cols);
                }
            }
        });
    }
    return o;
}

Id Tape::transpose(Id a) {
    check_id(a, "transpose");
    const Tensor& A = v(a);
    const std::int64_t r = A.rows(), c = A.cols();
    Tensor out = Tensor::zeros({c, r});
    transpose_raw(out.data.data(), A.data.data(), r, c);
    const bool needs = slots_[a].needs;
    const Id o = add_result(std::move(out), needs, "transpose");
    if (needs) {
        nodes_.push_back([this, a, o, r, c]() {
            const std::vector<double>& go = gbuf(o);
            std::vector<double> gt(go.size());
            transpose_raw(gt.data(), go.data(), c, r);
            active_kernels().axpy(gbuf(a).data(), 1.0, gt.data(),
                                  static_cast<std::int64_t>(gt.size()));
        });
    }
    return o;
}

Id Tape::concat_rows(const std::vector<Id>& parts) {
    if (parts.empty()) throw Error("concat_rows: no parts");
    std::int64_t total_rows = 0;
    const std::int64_t cols = v(parts[0]).cols();
    bool needs = false;
    for (const Id p : parts) {
        check_id(p, "concat_rows");
        const Tensor& t = v(p);
        if (t.cols() != cols) {
            throw Error("concat_rows: column mismatch " + t.shape_str());
        }
        total_rows += t.rows();
        needs = needs || slots_[p].needs;
    }
    Tensor out = Tensor::zeros({total_rows, cols});
    std::int64_t row = 0;
    for (const Id p : parts) {
        const Tensor& t = v(p);
        std::memcpy(out.data.data() + row * cols, t.data.data(),
                    t.data.size() * sizeof(double));
        row += t.rows();
    }
    const Id o = add_result(std::move(out), needs, "concat_rows");
    if (needs) {
        nodes_.push_back([this, parts, o, cols]() {
            const std::vector<double>& go = gbuf(o);
            std::int64_t row = 0;
            for (const Id p : parts) {
                const std::int64_t r = v(p).rows();
                if (slots_[p].needs) {
                    active_kernels().axpy(gbuf(p).data(), 1.0,
                                          go.data() + row * cols, r * cols);
                }
                row += r;
            }
        });
    }
    return o;
}

Id Tape::slice_rows(Id a, std::int64_t start, std::int64_t count) {
    check_id(a, "slice_rows");
    const Tensor& A = v(a);
    const std::int64_t r = A.rows(), c = A.cols();
    if (start < 0 || count < 0 || start + count > r) {
        throw Error("slice_rows: range out of bounds");
    }
    Tensor out = Tensor::zeros({count, c});
    std::memcpy(out.data.data(), A.data.data() + start * c,
                static_cast<std::size_t>(count * c) * sizeof(double));
    const bool needs = slots_[a].needs;
    const Id o = add_result(std::move(out), needs, "slice_rows");
    if (needs) {
        nodes_.push_back([this, a, o, start, count, c]() {
            const std::vector<double>& go = gbuf(o);
            active_kernels().axpy(gbuf(a).data() + start * c, 1.0, go.data(),
                                  count * c);
        });
    }
    return o;
}

Id Tape::slice_cols(Id a, std::int64_t start, std::int64_t width) {
    check_id(a, "slice_cols");
    const Tensor& A = v(a);
    const std::int64_t r = A.rows(), c = A.cols();
    if (start < 0 || width < 0 || start + width > c) {
        throw Error("slice_cols: range out of bounds");
    }
    Tensor out = Tensor::zeros({r, width});
    for (std::int64_t i = 0; i < r; ++i) {
        std::memcpy(out.data.data() + i * width, A.data.data() + i * c + start,
                    static_cast<std::size_t>(width) * sizeof(double));
    }
    const bool needs = slots_[a].needs;
    const Id o = add_result(std::move(out), needs, "slice_cols");
    if (needs) {
        nodes_.push_back([this, a, o, start, width, r, c]() {
            const std::vector<double>& go = gbuf(o);
            double* ga = gbuf(a).data();
            for (std::int64_t i = 0; i < r; ++i) {
                active_kernels().axpy(ga + i * c + start, 1.0,
                                      go.data() + i * width, width);
            }
        });
    }
    return o;
}

Id Tape::concat_cols(const std::vector<Id>& parts) {
    if (parts.empty()) throw Error("concat_cols: no parts");
    const std::int64_t rows = v(parts[0]).rows();
    std::int64_t total_cols = 0;
    bool needs = false;
    for (const Id p : parts) {
        check_id(p, "concat_cols");
        if (v(p).rows() != rows) {
            throw Error("concat_cols: row mismatch " + v(p).shape_str());
        }
        total_cols += v(p).cols();
        needs = needs || slots_[p].needs;
    }
    Tensor out = Tensor::zeros({rows, total_cols});
    std::int64_t col = 0;
    for (const Id p : parts) {
        const Tensor& t = v(p);
        const std::int64_t w = t.cols();
        for (std::int64_t i = 0; i < rows; ++i) {
            std::memcpy(out.data.data() + i * total_cols + col,
                        t.data.data() + i * w,
                        static_cast<std::size_t>(w) * sizeof(double));
        }
        col += w;
    }
    const Id o = add_result(std::move(out), needs, "concat_cols");
    if (needs) {
        nodes_.push_back([this, parts, o, rows, total_cols]() {
            const std::vector<double>& go = gbuf(o);
            std::int64_t col = 0;
            for (const Id p : parts) {
                const std::int64_t w = v(p).cols();
                if (slots_[p].needs) {
                    double* gp = gbuf(p).data();
                    for (std::int64_t i = 0; i < rows; ++i) {
                        active_kernels().axpy(gp + i * w, 1.0,
                                              go.data() + i * total_cols + col, w);
                    }
                }
                col += w;
            }
        });
    }
    return o;
}

Id Tape::softmax_rows(Id x) {
    check_id(x, "softmax_rows");
    const Tensor& X = v(x);
    const std::int64_t rows = X.rows(), cols = X.cols();
    if (cols < 1) throw Error("softmax_rows: empty rows");
    Tensor out = Tensor::zeros(X.shape);
    for (std::int64_t i = 0; i < rows; ++i) {
        const double* xr = X.data.data() + i * cols;
        double* yr = out.data.data() + i * cols;
        double mx = xr[0];
        for (std::int64_t j = 1; j < cols; ++j) mx = std::max(mx, xr[j]);
        double sum = 0.0;
        for (std::int64_t j = 0; j < cols; ++j) {
            yr[j] = std::exp(xr[j] - mx);
            sum += yr[j];
        }
        for (std::int64_t j = 0; j < cols; ++j) yr[j] /= sum;
    }
    const bool needs = slots_[x].needs;
    const Id o = add_result(std::move(out), needs, "softmax_rows");
    if (needs) {
        nodes_.push_back([this, x, o, rows, cols]() {
            const std::vector<double>& go = gbuf(o);
            const double* y = v(o).data.data();
            double* gx = gbuf(x).data();
            for (std::int64_t i = 0; i < rows; ++i) {
                const double* gr = go.data() + i * cols;
                const double* yr = y + i * cols;
                double s = 0.0;
                for (std::int64_t j = 0; j < cols; ++j) s += gr[j] * yr[j];
                double* gxr = gx + i * cols;
                for (std::int64_t j = 0; j < cols; ++j) {
                    gxr[j] += yr[j] * (gr[j] - s);
                }
            }
        });
    }
    return o;
}

Id Tape::layer_norm(Id x, Id gamma, Id beta, double eps) {
    check_id(x, "layer_norm");
    check_id(gamma, "layer_norm");
    check_id(beta, "layer_norm");
    const Tensor& X = v(x);
    const Tensor& G = v(gamma);
    const Tensor& B = v(beta);
    const std::int64_t rows = X.rows(), d = X.cols();
    if (d < 2) throw Error("layer_norm: feature dimension must be >= 2");
    if (eps < 0.0) throw Error("layer_norm: eps must be >= 0");
    if (G.numel() != d || B.numel() != d) {
        throw Error("layer_norm: gamma/beta length mismatch");
    }
    Tensor out = Tensor::zeros(X.shape);
    // Saved for backward: normalized values and per-row inverse stddev.
    auto xhat = std::make_shared<std::vector<double>>(X.data.size());
    auto inv_sigma = std::make_shared<std::vector<double>>(rows);
    const double inv_d = 1.0 / static_cast<double>(d);
    for (std::int64_t i = 0; i < rows; ++i) {
        const double* xr = X.data.data() + i * d;
        double mu = 0.0;
        for (std::int64_t j = 0; j < d; ++j) mu += xr[j];
        mu *= inv_d;
        double var = 0.0;
        for (std::int64_t j = 0; j < d; ++j) {
            const double dx = xr[j] - mu;
            var += dx * dx;
        }
        var *= inv_d;
        const double inv = 1.0 / std::sqrt(var + eps);
        (*inv_sigma)[i] = inv;
        double* xh = xhat->data() + i * d;
        double* yr = out.data.data() + i * d;
        for (std::int64_t j = 0; j < d; ++j) {
            xh[j] = (xr[j] - mu) * inv;
            yr[j] = G.data[j] * xh[j] + B.data[j];
        }
    }
    const bool needs = slots_[x].needs || slots_[gamma].needs || slots_[beta].needs;
    const Id o = add_result(std::move(out), needs, "layer_norm");
    if (needs) {
        nodes_.push_back([this, x, gamma, beta, o, rows, d, xhat, inv_sigma]() {
            const std::vector<double>& go = gbuf(o);
            const double* gvals = v(gamma).data.data();
            const double inv_d = 1.0 / static_cast<double>(d);
            std::vector<double> dxhat(static_cast<std::size_t>(d));
            for (std::int64_t i = 0; i < rows; ++i) {
                const double* gr = go.data() + i * d;
                const double* xh = xhat->data() + i * d;
                if (slots_[beta].needs) {
                    active_kernels().axpy(gbuf(beta).data(), 1.0, gr, d);
                }
                if (slots_[gamma].needs) {
                    double* gg = gbuf(gamma).data();
                    for (std::int64_t j = 0; j < d; ++j) gg[j] += gr[j] * xh[j];
                }
                if (slots_[x].needs) {
                    double m1 = 0.0, m2 = 0.0;
                    for (std::int64_t j = 0; j < d; ++j) {
                        dxhat[j] = gr[j] * gvals[j];
                        m1 += dxhat[j];
                        m2 += dxhat[j] * xh[j];
                    }
                    m1 *= inv_d;
                    m2 *= inv_d;
                    const double inv = (*inv_sigma)[i];
                    double* gx = gbuf(x).data() + i * d;
                    for (std::int64_t j = 0; j < d; ++j) {
                        gx[j] += inv * (dxhat[j] - m1 - xh[j] * m2);
                    }
                }
            }
        });
    }
    return o;
}

Id Tape::gelu(Id x) {
    check_id(x, "gelu");
    const Tensor& X = v(x);
    Tensor out = Tensor::zeros(X.shape);
    for (std::size_t i = 0; i < X.data.size(); ++i) {
        const double xi = X.data[i];
        const double phi = 0.5 * (1.0 + std::erf(xi * kInvSqrt2));
        out.data[i] = xi * phi;
    }
    const bool needs = slots_[x].needs;
    const Id o = add_result(std::move(out), needs, "gelu");
    if (needs) {
        nodes_.push_back([this, x, o]() {
            const std::vector<double>& go = gbuf(o);
            const std::vector<double>& xv = v(x).data;
            double* gx = gbuf(x).data();
            for (std::size_t i = 0; i < xv.size(); ++i) {
                const double xi = xv[i];
                const double phi = 0.5 * (1.0 + std::erf(xi * kInvSqrt2));
                const double pdf = kInvSqrt2Pi * std::exp(-0.5 * xi * xi);
                gx[i] += go[i] * (phi + xi * pdf);
            }
        });
    }
    return o;
}

Id Tape::sum(Id x) {
    check_id(x, "sum");
    const Tensor& X = v(x);
    double acc = 0.0;
    for (const double xi : X.data) acc += xi;
    Tensor out = Tensor::from_vec({acc});
    const bool needs = slots_[x].needs;
    const Id o = add_result(std::move(out), needs, "sum");
    if (needs) {
        nodes_.push_back([this, x, o]() {
            const double g0 = gbuf(o)[0];
            std::vector<double>& gx = gbuf(x);
            for (double& g : gx) g += g0;
        });
    }
    return o;
}

Id Tape::masked_cross_entropy(Id logits, int label,
                              const std::vector<std::uint8_t>& active) {
    check_id(logits, "masked_cross_entropy");
    const Tensor& Z = v(logits);
    const std::int64_t c = Z.numel();
    if (static_cast<std::int64_t>(active.size()) != c) {
        throw Error("masked_cross_entropy: mask length mismatch");
    }
    if (label < 0 || label >= c || !active[label]) {
        throw Error("masked_cross_entropy: label not in the active set");
    }
    // Log-sum-exp over active logits only; inactive entries are never read.
    double mx = -std::numeric_limits<double>::infinity();
    for (std::int64_t j = 0; j < c; ++j) {
        if (active[j]) mx = std::max(mx, Z.data[j]);
    }
    double sum = 0.0;
    for (std::int64_t j = 0; j < c; ++j) {
        if (active[j]) sum += std::exp(Z.data[j] - mx);
    }
    const double loss = mx + std::log(sum) - Z.data[label];
    const bool needs = slots_[logits].needs;
    const Id o = add_result(Tensor::from_vec({loss}), needs, "masked_cross_entropy");
    if (needs) {
        // Active-class probabilities, frozen at forward time.
        auto probs = std::make_shared<std::vector<double>>(static_cast<std::size_t>(c), 0.0);
        for (std::int64_t j = 0; j < c; ++j) {
            if (active[j]) (*probs)[j] = std::exp(Z.data[j] - mx) / sum;
        }
        nodes_.push_back([this, logits, o, label, probs]() {
            const double g0 = gbuf(o)[0];
            double* gz = gbuf(logits).data();
            const std::int64_t c2 = static_cast<std::int64_t>(probs->size());
            for (std::int64_t j = 0; j < c2; ++j) {
                const double p = (*probs)[j];
                if (p != 0.0 || j == label) {
                    gz[j] += g0 * (p - (j == label ? 1.0 : 0.0));
                }
            }
        });
    }
    return o;
}

Id Tape::quadratic_penalty(Id params, const Tensor& anchor, const Tensor& weight,
                           double coef) {
    check_id(params, "quadratic_penalty");
    const Tensor& P = v(params);
    if (anchor.numel() != P.numel() || weight.numel() != P.numel()) {
        throw Error("quadratic_penalty: anchor/weight size mismatch");
    }
    double acc = 0.0;
    for (std::size_t i = 0; i < P.data.size(); ++i) {
        const double d = P.data[i] - anchor.data[i];
        acc += weight.data[i] * (d * d);
    }
    const double value = coef * acc;
    const bool needs = slots_[params].needs;
    const Id o = add_result(Tensor::from_vec({value}), needs, "quadratic_penalty");
    if (needs) {
        auto a = std::make_shared<std::vector<double>>(anchor.data);
        auto w = std::make_shared<std::vector<double>>(weight.data);
        nodes_.push_back([this, params, o, a, w, coef]() {
            const double g0 = gbuf(o)[0];
            const std::vector<double>& pv = v(params).data;
            double* gp = gbuf(params).data();
            for (std::size_t i = 0; i < pv.size(); ++i) {
                gp[i] += g0 * coef * 2.0 * (*w)[i] * (pv[i] - (*a)[i]);
            }
        });
    }
    return o;
}

Id Tape::surrogate_key_loss(const Tensor& query, Id keys,
                            const std::vector<int>& selected) {
    check_id(keys, "surrogate_key_loss");
    const Tensor& K = v(keys);
    const std::int64_t m = K.rows(), d = K.cols();
    if (query.numel() != d) throw Error("surrogate_key_loss: query width mismatch");
    if (selected.empty()) throw Error("surrogate_key_loss: no keys selected");
    for (const int j : selected) {
        if (j < 0 || j >= m) throw Error("surrogate_key_loss: index out of range");
    }
    const double qn = norm_seq(query.data.data(), d);
    double acc = 0.0;
    for (const int j : selected) {
        acc += 1.0 - cosine_or_neg1(query.data.data(), qn, K.data.data() + j * d,
                                    d, nullptr);
    }
    const double value = acc / static_cast<double>(selected.size());
    const bool needs = slots_[keys].needs;
    const Id o = add_result(Tensor::from_vec({value}), needs, "surrogate_key_loss");
    if (needs) {
        auto q = std::make_shared<std::vector<double>>(query.data);
        nodes_.push_back([this, keys, o, q, selected, qn, d]() {
            const double g0 = gbuf(o)[0];
            const double inv_s = 1.0 / static_cast<double>(selected.size());
            const std::vector<double>& kv = v(keys).data;
            double* gk = gbuf(keys).data();
            for (const int j : selected) {
                const double* kr = kv.data() + j * d;
                double kn = 0.0;
                const double cosv = cosine_or_neg1(q->data(), qn, kr, d, &kn);
                if (qn == 0.0 || kn == 0.0) continue;
                // d(1-cos)/dk = -(q/(|q||k|) - cos * k/|k|^2)
                const double f = -g0 * inv_s;
                const double c1 = 1.0 / (qn * kn);
                const double c2 = cosv / (kn * kn);
                double* gkr = gk + j * d;
                for (std::int64_t t = 0; t < d; ++t) {
                    gkr[t] += f * ((*q)[t] * c1 - kr[t] * c2);
                }
            }
        });
    }
    return o;
}

Id Tape::weighted_compose(const Tensor& query, Id keys,
                          const std::vector<Id>& values) {
    check_id(keys, "weighted_compose");
    const Tensor& K = v(keys);
    const std::int64_t m = K.rows(), d = K.cols();
    if (query.numel() != d) throw Error("weighted_compose: query width mismatch");
    if (static_cast<std::int64_t>(values.size()) != m || m < 1) {
        throw Error("weighted_compose: need one value prompt per key");
    }
    const auto& vshape = v(values[0]).shape;
    for (const Id p : values) {
        check_id(p, "weighted_compose");
        if (v(p).shape != vshape) throw Error("weighted_compose: value shape mismatch");
    }
    const double qn = norm_seq(query.data.data(), d);
    auto cosv = std::make_shared<std::vector<double>>(m);
    auto alpha = std::make_shared<std::vector<double>>(m);
    auto knorm = std::make_shared<std::vector<double>>(m);
    double mx = -std::numeric_limits<double>::infinity();
    for (std::int64_t j = 0; j < m; ++j) {
        (*cosv)[j] = cosine_or_neg1(query.data.data(), qn, K.data.data() + j * d,
                                    d, &(*knorm)[j]);
        mx = std::max(mx, (*cosv)[j]);
    }
    double sum = 0.0;
    for (std::int64_t j = 0; j < m; ++j) {
        (*alpha)[j] = std::exp((*cosv)[j] - mx);
        sum += (*alpha)[j];
    }
    for (std::int64_t j = 0; j < m; ++j) (*alpha)[j] /= sum;

    Tensor out = Tensor::zeros(vshape);
    for (std::int64_t j = 0; j < m; ++j) {
        active_kernels().axpy(out.data.data(), (*alpha)[j], v(values[j]).data.data(),
                              out.numel());
    }
    bool needs = slots_[keys].needs;
    for (const Id p : values) needs = needs || slots_[p].needs;
    const Id o = add_result(std::move(out), needs, "weighted_compose");
    if (needs) {
        auto q = std::make_shared<std::vector<double>>(query.data);
        nodes_.push_back([this, keys, values, o, q, qn, d, m, cosv, alpha, knorm]() {
            const std::vector<double>& go = gbuf(o);
            const std::int64_t n = static_cast<std::int64_t>(go.size());
            for (std::int64_t j = 0; j < m; ++j) {
                if (slots_[values[j]].needs) {
                    active_kernels().axpy(gbuf(values[j]).data(), (*alpha)[j],
                                          go.data(), n);
                }
            }
            if (slots_[keys].needs) {
                // Through the softmax into the cosine scores.
                std::vector<double> dalpha(static_cast<std::size_t>(m));
                double s = 0.0;
                for (std::int64_t j = 0; j < m; ++j) {
                    dalpha[j] = dot_seq(go.data(), v(values[j]).data.data(), n);
                    s += (*alpha)[j] * dalpha[j];
                }
                const std::vector<double>& kv = v(keys).data;
                double* gk = gbuf(keys).data();
                for (std::int64_t j = 0; j < m; ++j) {
                    if (qn == 0.0 || (*knorm)[j] == 0.0) continue;
                    const double dc = (*alpha)[j] * (dalpha[j] - s);
                    const double* kr = kv.data() + j * d;
                    const double c1 = 1.0 / (qn * (*knorm)[j]);
                    const double c2 = (*cosv)[j] / ((*knorm)[j] * (*knorm)[j]);
                    double* gkr = gk + j * d;
                    for (std::int64_t t = 0; t < d; ++t) {
                        gkr[t] += dc * ((*q)[t] * c1 - kr[t] * c2);
                    }
                }
            }
        });
    }
    return o;
}

void Tape::backward(Id loss) {
    check_id(loss, "backward");
    if (!v(loss).is_scalar()) throw Error("backward: loss is not a scalar");
    for (Slot& s : slots_) {
        if (!s.leaf && !s.gradbuf.empty()) {
            std::fill(s.gradbuf.begin(), s.gradbuf.end(), 0.0);
        }
    }
    gbuf(loss)[0] += 1.0;
    for (auto it = nodes_.rbegin(); it != nodes_.rend(); ++it) (*it)();
}

void Tape::reset() {
    slots_.clear();
    nodes_.clear();
}

const Tensor& Tape::val(Id id) const {
    check_id(id, "val");
    return v(id);
}

bool Tape::grad_tracked(Id id) const {
    check_id(id, "grad_tracked");
    return slots_[id].needs;
}

const std::vector<double>& Tape::grad(Id id) const {
    check_id(id, "grad");
    const Slot& s = slots_[id];
    return s.leaf ? s.leaf->grad : s.gradbuf;
}

double finite_diff_check(const std::function<Id(Tape&)>& build_loss,
                         const std::vector<Tensor*>& leaves, double h) {
    if (!(h >= 1e-7 && h <= 1e-3)) {
        throw Error("finite_diff_check: h must lie in [1e-7, 1e-3]");
    }
    const auto eval = [&build_loss]() {
        Tape t;
        const Id l = build_loss(t);
        const Tensor& out = t.val(l);
        if (!out.is_scalar()) throw Error("finite_diff_check: loss is not scalar");
        return out.data[0];
    };

    const double base1 = eval();
    const double base2 = eval();
    if (std::memcmp(&base1, &base2, sizeof(double)) != 0) {
        throw Error("finite_diff_check: function is not deterministic");
    }

    for (Tensor* leaf : leaves) leaf->zero_grad();
    std::vector<std::vector<double>> analytic;
    {
        Tape t;
        const Id l = build_loss(t);
        t.backward(l);
        for (Tensor* leaf : leaves) analytic.push_back(leaf->grad);
    }

    double max_rel = 0.0;
    for (std::size_t li = 0; li < leaves.size(); ++li) {
        Tensor* leaf = leaves[li];
        for (std::size_t i = 0; i < leaf->data.size(); ++i) {
            const double saved = leaf->data[i];
            leaf->data[i] = saved + h;
            const double fp = eval();
            leaf->data[i] = saved - h;
            const double fm = eval();
            leaf->data[i] = saved;
            const double numeric = (fp - fm) / (2.0 * h);
            const double rel = std::abs(analytic[li][i] - numeric) /
                               std::max(1.0, std::abs(numeric));
            max_rel = std::max(max_rel, rel);
        }
    }
    return max_rel;
}

}  // namespace plab
