#include "spectrumfm/tape.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

namespace spectrumfm {

namespace {
constexpr double kGeluC = 0.044715;
const double kSqrt2OverPi = std::sqrt(2.0 / std::numbers::pi);
}  // namespace

double gelu_scalar(double x) {
    const double u = kSqrt2OverPi * (x + kGeluC * x * x * x);
    return 0.5 * x * (1.0 + std::tanh(u));
}

double gelu_grad_scalar(double x) {
    const double u = kSqrt2OverPi * (x + kGeluC * x * x * x);
    const double t = std::tanh(u);
    const double du = kSqrt2OverPi * (1.0 + 3.0 * kGeluC * x * x);
    return 0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * du;
}

double sigmoid_scalar(double x) {
    if (x >= 0.0) {
        const double e = std::exp(-x);
        return 1.0 / (1.0 + e);
    }
    const double e = std::exp(x);
    return e / (1.0 + e);
}

Tape::NodeId Tape::push(Mat value, bool tracked) {
    Node n;
    n.owned = std::move(value);
    n.tracked = grads_ && tracked;
    if (n.tracked) n.grad = Mat(n.owned.rows, n.owned.cols);
    nodes_.push_back(std::move(n));
    return static_cast<NodeId>(nodes_.size() - 1);
}

Tape::NodeId Tape::leaf(const Param& p) {
    Node n;
    n.view = &p.value;
    n.tracked = grads_ && p.trainable;
    n.param = &p;
    if (n.tracked) {
        n.grad = Mat(p.value.rows, p.value.cols);
        n.back = [id = static_cast<NodeId>(nodes_.size())](Tape& t) {
            const Node& self = t.node(id);
            if (t.sink_) t.sink_->accumulate(*self.param, self.grad);
        };
    }
    nodes_.push_back(std::move(n));
    return static_cast<NodeId>(nodes_.size() - 1);
}

Tape::NodeId Tape::input(Mat v, bool track) {
    return push(std::move(v), track);
}

const Mat& Tape::grad_of(NodeId id) const {
    if (!node(id).tracked) throw ShapeError("grad_of: node is not tracked");
    return node(id).grad;
}

Tape::NodeId Tape::matmul(NodeId a, NodeId b) {
    const Mat& av = val(a);
    const Mat& bv = val(b);
    Mat out(av.rows, bv.cols);
    gemm(av, false, bv, false, out, false);
    const bool tr = tracked(a) || tracked(b);
    NodeId id = push(std::move(out), tr);
    if (tr) {
        node(id).back = [a, b, id](Tape& t) {
            const Mat& g = t.grad(id);
            if (t.tracked(a)) gemm(g, false, t.val(b), true, t.grad(a), true);
            if (t.tracked(b)) gemm(t.val(a), true, g, false, t.grad(b), true);
        };
    }
    return id;
}

Tape::NodeId Tape::matmul_nt(NodeId a, NodeId b) {
    const Mat& av = val(a);
    const Mat& bv = val(b);
    Mat out(av.rows, bv.rows);
    gemm(av, false, bv, true, out, false);
    const bool tr = tracked(a) || tracked(b);
    NodeId id = push(std::move(out), tr);
    if (tr) {
        node(id).back = [a, b, id](Tape& t) {
            const Mat& g = t.grad(id);
            if (t.tracked(a)) gemm(g, false, t.val(b), false, t.grad(a), true);
            if (t.tracked(b)) gemm(g, true, t.val(a), false, t.grad(b), true);
        };
    }
    return id;
}

Tape::NodeId Tape::add(NodeId a, NodeId b) {
    const Mat& av = val(a);
    const Mat& bv = val(b);
    if (!av.same_shape(bv)) throw ShapeError("add: shape mismatch");
    Mat out = av;
    for (size_t i = 0; i < out.v.size(); ++i) out.v[i] += bv.v[i];
    const bool tr = tracked(a) || tracked(b);
    NodeId id = push(std::move(out), tr);
    if (tr) {
        node(id).back = [a, b, id](Tape& t) {
            const Mat& g = t.grad(id);
            if (t.tracked(a))
                for (size_t i = 0; i < g.v.size(); ++i) t.grad(a).v[i] += g.v[i];
            if (t.tracked(b))
                for (size_t i = 0; i < g.v.size(); ++i) t.grad(b).v[i] += g.v[i];
        };
    }
    return id;
}

Tape::NodeId Tape::sub(NodeId a, NodeId b) {
    const Mat& av = val(a);
    const Mat& bv = val(b);
    if (!av.same_shape(bv)) throw ShapeError("sub: shape mismatch");
    Mat out = av;
    for (size_t i = 0; i < out.v.size(); ++i) out.v[i] -= bv.v[i];
    const bool tr = tracked(a) || tracked(b);
    NodeId id = push(std::move(out), tr);
    if (tr) {
        node(id).back = [a, b, id](Tape& t) {
            const Mat& g = t.grad(id);
            if (t.tracked(a))
                for (size_t i = 0; i < g.v.size(); ++i) t.grad(a).v[i] += g.v[i];
            if (t.tracked(b))
                for (size_t i = 0; i < g.v.size(); ++i) t.grad(b).v[i] -= g.v[i];
        };
    }
    return id;
}

Tape::NodeId Tape::mul(NodeId a, NodeId b) {
    const Mat& av = val(a);
    const Mat& bv = val(b);
    if (!av.same_shape(bv)) throw ShapeError("mul: shape mismatch");
    Mat out = av;
    for (size_t i = 0; i < out.v.size(); ++i) out.v[i] *= bv.v[i];
    const bool tr = tracked(a) || tracked(b);
    NodeId id = push(std::move(out), tr);
    if (tr) {
        node(id).back = [a, b, id](Tape& t) {
            const Mat& g = t.grad(id);
            if (t.tracked(a))
                for (size_t i = 0; i < g.v.size(); ++i) t.grad(a).v[i] += g.v[i] * t.val(b).v[i];
            if (t.tracked(b))
                for (size_t i = 0; i < g.v.size(); ++i) t.grad(b).v[i] += g.v[i] * t.val(a).v[i];
        };
    }
    return id;
}

Tape::NodeId Tape::add_rowvec(NodeId x, NodeId bias) {
    const Mat& xv = val(x);
    const Mat& bv = val(bias);
    if (bv.rows != 1 || bv.cols != xv.cols) throw ShapeError("add_rowvec: bias shape mismatch");
    Mat out = xv;
    for (int r = 0; r < out.rows; ++r) {
        double* row = out.row(r);
        for (int c = 0; c < out.cols; ++c) row[c] += bv.v[c];
    }
    const bool tr = tracked(x) || tracked(bias);
    NodeId id = push(std::move(out), tr);
    if (tr) {
        node(id).back = [x, bias, id](Tape& t) {
            const Mat& g = t.grad(id);
            if (t.tracked(x))
                for (size_t i = 0; i < g.v.size(); ++i) t.grad(x).v[i] += g.v[i];
            if (t.tracked(bias)) {
                Mat& gb = t.grad(bias);
                for (int r = 0; r < g.rows; ++r) {
                    const double* row = g.row(r);
                    for (int c = 0; c < g.cols; ++c) gb.v[c] += row[c];
                }
            }
        };
    }
    return id;
}

Tape::NodeId Tape::scale(NodeId a, double k) {
    return affine(a, k, 0.0);
}

Tape::NodeId Tape::affine(NodeId a, double k, double c) {
    Mat out = val(a);
    for (double& x : out.v) x = k * x + c;
    const bool tr = tracked(a);
    NodeId id = push(std::move(out), tr);
    if (tr) {
        node(id).back = [a, k, id](Tape& t) {
            const Mat& g = t.grad(id);
            for (size_t i = 0; i < g.v.size(); ++i) t.grad(a).v[i] += k * g.v[i];
        };
    }
    return id;
}

Tape::NodeId Tape::gelu(NodeId a) {
    Mat out = val(a);
    for (double& x : out.v) x = gelu_scalar(x);
    const bool tr = tracked(a);
    NodeId id = push(std::move(out), tr);
    if (tr) {
        node(id).back = [a, id](Tape& t) {
            const Mat& g = t.grad(id);
            const Mat& in = t.val(a);
            for (size_t i = 0; i < g.v.size(); ++i)
                t.grad(a).v[i] += g.v[i] * gelu_grad_scalar(in.v[i]);
        };
    }
    return id;
}

Tape::NodeId Tape::sigmoid(NodeId a) {
    Mat out = val(a);
    for (double& x : out.v) x = sigmoid_scalar(x);
    const bool tr = tracked(a);
    NodeId id = push(std::move(out), tr);
    if (tr) {
        node(id).back = [a, id](Tape& t) {
            const Mat& g = t.grad(id);
            const Mat& s = t.val(id);
            for (size_t i = 0; i < g.v.size(); ++i)
                t.grad(a).v[i] += g.v[i] * s.v[i] * (1.0 - s.v[i]);
        };
    }
    return id;
}

Tape::NodeId Tape::tanh_op(NodeId a) {
    Mat out = val(a);
    for (double& x : out.v) x = std::tanh(x);
    const bool tr = tracked(a);
    NodeId id = push(std::move(out), tr);
    if (tr) {
        node(id).back = [a, id](Tape& t) {
            const Mat& g = t.grad(id);
            const Mat& y = t.val(id);
            for (size_t i = 0; i < g.v.size(); ++i)
                t.grad(a).v[i] += g.v[i] * (1.0 - y.v[i] * y.v[i]);
        };
    }
    return id;
}

Tape::NodeId Tape::softmax_rows(NodeId a) {
    Mat out = val(a);
    for (int r = 0; r < out.rows; ++r) {
        double* row = out.row(r);
        double mx = row[0];
        for (int c = 1; c < out.cols; ++c) mx = std::max(mx, row[c]);
        double sum = 0.0;
        for (int c = 0; c < out.cols; ++c) {
            row[c] = std::exp(row[c] - mx);
            sum += row[c];
        }
        for (int c = 0; c < out.cols; ++c) row[c] /= sum;
    }
    const bool tr = tracked(a);
    NodeId id = push(std::move(out), tr);
    if (tr) {
        node(id).back = [a, id](Tape& t) {
            const Mat& g = t.grad(id);
            const Mat& s = t.val(id);
            Mat& ga = t.grad(a);
            for (int r = 0; r < g.rows; ++r) {
                const double* grow = g.row(r);
                const double* srow = s.row(r);
                double dot = 0.0;
                for (int c = 0; c < g.cols; ++c) dot += grow[c] * srow[c];
                double* garow = ga.row(r);
                for (int c = 0; c < g.cols; ++c) garow[c] += srow[c] * (grow[c] - dot);
            }
        };
    }
    return id;
}

Tape::NodeId Tape::layer_norm_rows(NodeId x, NodeId gain, NodeId bias, double eps) {
    const Mat& xv = val(x);
    const Mat& gv = val(gain);
    const Mat& bv = val(bias);
    if (gv.cols != xv.cols || bv.cols != xv.cols) throw ShapeError("layer_norm: gain/bias shape");
    Mat xhat(xv.rows, xv.cols);
    std::vector<double> inv_s(static_cast<size_t>(xv.rows));
    Mat out(xv.rows, xv.cols);
    for (int r = 0; r < xv.rows; ++r) {
        const double* row = xv.row(r);
        double mean = 0.0;
        for (int c = 0; c < xv.cols; ++c) mean += row[c];
        mean /= xv.cols;
        double var = 0.0;
        for (int c = 0; c < xv.cols; ++c) {
            const double d = row[c] - mean;
            var += d * d;
        }
        var /= xv.cols;
        const double is = 1.0 / std::sqrt(var + eps);
        inv_s[static_cast<size_t>(r)] = is;
        double* hrow = xhat.row(r);
        double* orow = out.row(r);
        for (int c = 0; c < xv.cols; ++c) {
            hrow[c] = (row[c] - mean) * is;
            orow[c] = hrow[c] * gv.v[c] + bv.v[c];
        }
    }
    const bool tr = tracked(x) || tracked(gain) || tracked(bias);
    NodeId id = push(std::move(out), tr);
    if (tr) {
        node(id).back = [x, gain, bias, id, xhat = std::move(xhat),
                         inv_s = std::move(inv_s)](Tape& t) {
            const Mat& g = t.grad(id);
            const Mat& gv = t.val(gain);
            const int n = g.cols;
            if (t.tracked(gain)) {
                Mat& gg = t.grad(gain);
                for (int r = 0; r < g.rows; ++r) {
                    const double* grow = g.row(r);
                    const double* hrow = xhat.row(r);
                    for (int c = 0; c < n; ++c) gg.v[c] += grow[c] * hrow[c];
                }
            }
            if (t.tracked(bias)) {
                Mat& gb = t.grad(bias);
                for (int r = 0; r < g.rows; ++r) {
                    const double* grow = g.row(r);
                    for (int c = 0; c < n; ++c) gb.v[c] += grow[c];
                }
            }
            if (t.tracked(x)) {
                Mat& gx = t.grad(x);
                for (int r = 0; r < g.rows; ++r) {
                    const double* grow = g.row(r);
                    const double* hrow = xhat.row(r);
                    double mean_h = 0.0, mean_hx = 0.0;
                    for (int c = 0; c < n; ++c) {
                        const double hc = grow[c] * gv.v[c];
                        mean_h += hc;
                        mean_hx += hc * hrow[c];
                    }
                    mean_h /= n;
                    mean_hx /= n;
                    double* gxrow = gx.row(r);
                    const double is = inv_s[static_cast<size_t>(r)];
                    for (int c = 0; c < n; ++c) {
                        const double hc = grow[c] * gv.v[c];
                        gxrow[c] += is * (hc - mean_h - hrow[c] * mean_hx);
                    }
                }
            }
        };
    }
    return id;
}

namespace {
// im2col for a same-padded 1D convolution: out row p holds the K*Cin window
// centred at p (zeros beyond the ends).
Mat conv_unfold(const Mat& x, int kernel) {
    const int n = x.rows, cin = x.cols;
    const int half = kernel / 2;
    Mat u(n, kernel * cin);
    for (int p = 0; p < n; ++p) {
        double* urow = u.row(p);
        for (int t = 0; t < kernel; ++t) {
            const int src = p + t - half;
            if (src < 0 || src >= n) continue;
            const double* xrow = x.row(src);
            for (int c = 0; c < cin; ++c) urow[t * cin + c] = xrow[c];
        }
    }
    return u;
}
}  // namespace

Tape::NodeId Tape::conv1d_same(NodeId x, NodeId w, int kernel) {
    if (kernel % 2 == 0) throw ConfigError("conv1d_same: kernel must be odd");
    const Mat& xv = val(x);
    const Mat& wv = val(w);
    if (wv.rows != kernel * xv.cols) throw ShapeError("conv1d_same: weight shape mismatch");
    Mat unfolded = conv_unfold(xv, kernel);
    Mat out(xv.rows, wv.cols);
    gemm(unfolded, false, wv, false, out, false);
    const bool tr = tracked(x) || tracked(w);
    NodeId id = push(std::move(out), tr);
    if (tr) {
        node(id).back = [x, w, id, kernel](Tape& t) {
            const Mat& g = t.grad(id);
            const Mat& xv = t.val(x);
            const int cin = xv.cols;
            const int half = kernel / 2;
            if (t.tracked(w)) {
                Mat unfolded = conv_unfold(xv, kernel);
                gemm(unfolded, true, g, false, t.grad(w), true);
            }
            if (t.tracked(x)) {
                Mat gu(xv.rows, kernel * cin);
                gemm(g, false, t.val(w), true, gu, false);
                Mat& gx = t.grad(x);
                for (int p = 0; p < xv.rows; ++p) {
                    const double* gurow = gu.row(p);
                    for (int tk = 0; tk < kernel; ++tk) {
                        const int src = p + tk - half;
                        if (src < 0 || src >= xv.rows) continue;
                        double* gxrow = gx.row(src);
                        for (int c = 0; c < cin; ++c) gxrow[c] += gurow[tk * cin + c];
                    }
                }
            }
        };
    }
    return id;
}

Tape::NodeId Tape::depthwise3(NodeId x, NodeId w) {
    const Mat& xv = val(x);
    const Mat& wv = val(w);
    if (wv.rows != 3 || wv.cols != xv.cols) throw ShapeError("depthwise3: weight shape mismatch");
    const int n = xv.rows, d = xv.cols;
    Mat out(n, d);
    for (int p = 0; p < n; ++p) {
        double* orow = out.row(p);
        for (int t = 0; t < 3; ++t) {
            const int src = p + t - 1;
            if (src < 0 || src >= n) continue;
            const double* xrow = xv.row(src);
            const double* wrow = wv.row(t);
            for (int c = 0; c < d; ++c) orow[c] += wrow[c] * xrow[c];
        }
    }
    const bool tr = tracked(x) || tracked(w);
    NodeId id = push(std::move(out), tr);
    if (tr) {
        node(id).back = [x, w, id](Tape& t) {
            const Mat& g = t.grad(id);
            const Mat& xv = t.val(x);
            const Mat& wv = t.val(w);
            const int n = xv.rows, d = xv.cols;
            if (t.tracked(x)) {
                Mat& gx = t.grad(x);
                for (int p = 0; p < n; ++p) {
                    const double* grow = g.row(p);
                    for (int tk = 0; tk < 3; ++tk) {
                        const int src = p + tk - 1;
                        if (src < 0 || src >= n) continue;
                        double* gxrow = gx.row(src);
                        const double* wrow = wv.row(tk);
                        for (int c = 0; c < d; ++c) gxrow[c] += grow[c] * wrow[c];
                    }
                }
            }
            if (t.tracked(w)) {
                Mat& gw = t.grad(w);
                for (int p = 0; p < n; ++p) {
                    const double* grow = g.row(p);
                    for (int tk = 0; tk < 3; ++tk) {
                        const int src = p + tk - 1;
                        if (src < 0 || src >= n) continue;
                        const double* xrow = xv.row(src);
                        double* gwrow = gw.row(tk);
                        for (int c = 0; c < d; ++c) gwrow[c] += grow[c] * xrow[c];
                    }
                }
            }
        };
    }
    return id;
}

Tape::NodeId Tape::rows(NodeId a, int r0, int n) {
    const Mat& av = val(a);
    if (r0 < 0 || r0 + n > av.rows) throw ShapeError("rows: slice out of range");
    Mat out(n, av.cols);
    for (int r = 0; r < n; ++r)
        std::copy(av.row(r0 + r), av.row(r0 + r) + av.cols, out.row(r));
    const bool tr = tracked(a);
    NodeId id = push(std::move(out), tr);
    if (tr) {
        node(id).back = [a, r0, n, id](Tape& t) {
            const Mat& g = t.grad(id);
            Mat& ga = t.grad(a);
            for (int r = 0; r < n; ++r) {
                const double* grow = g.row(r);
                double* garow = ga.row(r0 + r);
                for (int c = 0; c < g.cols; ++c) garow[c] += grow[c];
            }
        };
    }
    return id;
}

Tape::NodeId Tape::cols(NodeId a, int c0, int n) {
    const Mat& av = val(a);
    if (c0 < 0 || c0 + n > av.cols) throw ShapeError("cols: slice out of range");
    Mat out(av.rows, n);
    for (int r = 0; r < av.rows; ++r) {
        const double* arow = av.row(r);
        double* orow = out.row(r);
        for (int c = 0; c < n; ++c) orow[c] = arow[c0 + c];
    }
    const bool tr = tracked(a);
    NodeId id = push(std::move(out), tr);
    if (tr) {
        node(id).back = [a, c0, n, id](Tape& t) {
            const Mat& g = t.grad(id);
            Mat& ga = t.grad(a);
            for (int r = 0; r < g.rows; ++r) {
                const double* grow = g.row(r);
                double* garow = ga.row(r);
                for (int c = 0; c < n; ++c) garow[c0 + c] += grow[c];
            }
        };
    }
    return id;
}

Tape::NodeId Tape::hcat(const std::vector<NodeId>& parts) {
    if (parts.empty()) throw ShapeError("hcat: no parts");
    const int rows_n = val(parts[0]).rows;
    int total = 0;
    bool tr = false;
    for (NodeId p : parts) {
        if (val(p).rows != rows_n) throw ShapeError("hcat: row mismatch");
        total += val(p).cols;
        tr = tr || tracked(p);
    }
    Mat out(rows_n, total);
    int off = 0;
    for (NodeId p : parts) {
        const Mat& pv = val(p);
        for (int r = 0; r < rows_n; ++r) {
            const double* prow = pv.row(r);
            double* orow = out.row(r);
            for (int c = 0; c < pv.cols; ++c) orow[off + c] = prow[c];
        }
        off += pv.cols;
    }
    NodeId id = push(std::move(out), tr);
    if (tr) {
        node(id).back = [parts, id](Tape& t) {
            const Mat& g = t.grad(id);
            int off = 0;
            for (NodeId p : parts) {
                const int w = t.val(p).cols;
                if (t.tracked(p)) {
                    Mat& gp = t.grad(p);
                    for (int r = 0; r < g.rows; ++r) {
                        const double* grow = g.row(r);
                        double* gprow = gp.row(r);
                        for (int c = 0; c < w; ++c) gprow[c] += grow[off + c];
                    }
                }
                off += w;
            }
        };
    }
    return id;
}

Tape::NodeId Tape::mean_rows(NodeId a) {
    const Mat& av = val(a);
    Mat out(1, av.cols);
    for (int r = 0; r < av.rows; ++r) {
        const double* arow = av.row(r);
        for (int c = 0; c < av.cols; ++c) out.v[c] += arow[c];
    }
    for (double& x : out.v) x /= av.rows;
    const bool tr = tracked(a);
    NodeId id = push(std::move(out), tr);
    if (tr) {
        node(id).back = [a, id](Tape& t) {
            const Mat& g = t.grad(id);
            Mat& ga = t.grad(a);
            const double inv = 1.0 / ga.rows;
            for (int r = 0; r < ga.rows; ++r) {
                double* garow = ga.row(r);
                for (int c = 0; c < ga.cols; ++c) garow[c] += g.v[c] * inv;
            }
        };
    }
    return id;
}

Tape::NodeId Tape::dropout(NodeId a, double rate, Rng& rng) {
    if (rate <= 0.0) return a;
    if (rate >= 1.0) throw ConfigError("dropout rate must be < 1");
    const Mat& av = val(a);
    const double keep_scale = 1.0 / (1.0 - rate);
    Mat mask(av.rows, av.cols);
    for (double& m : mask.v) m = rng.bernoulli(rate) ? 0.0 : keep_scale;
    Mat out = av;
    for (size_t i = 0; i < out.v.size(); ++i) out.v[i] *= mask.v[i];
    const bool tr = tracked(a);
    NodeId id = push(std::move(out), tr);
    if (tr) {
        node(id).back = [a, id, mask = std::move(mask)](Tape& t) {
            const Mat& g = t.grad(id);
            for (size_t i = 0; i < g.v.size(); ++i) t.grad(a).v[i] += g.v[i] * mask.v[i];
        };
    }
    return id;
}

Tape::NodeId Tape::masked_mse(NodeId pred, const Mat& target, const std::vector<uint8_t>& keep) {
    const Mat& pv = val(pred);
    if (!pv.same_shape(target)) throw ShapeError("masked_mse: pred/target shape mismatch");
    if (static_cast<int>(keep.size()) != pv.rows) throw ShapeError("masked_mse: mask length");
    int masked = 0;
    double acc = 0.0;
    for (int p = 0; p < pv.rows; ++p) {
        if (keep[static_cast<size_t>(p)]) continue;
        ++masked;
        const double* prow = pv.row(p);
        const double* trow = target.row(p);
        for (int c = 0; c < pv.cols; ++c) {
            const double d = prow[c] - trow[c];
            acc += d * d;
        }
    }
    if (masked == 0) throw EvalError("masked_mse: no masked positions");
    Mat out(1, 1);
    out.v[0] = acc / masked;
    const bool tr = tracked(pred);
    NodeId id = push(std::move(out), tr);
    if (tr) {
        node(id).back = [pred, id, target, keep, masked](Tape& t) {
            const double gs = t.grad(id).v[0] * 2.0 / masked;
            const Mat& pv = t.val(pred);
            Mat& gp = t.grad(pred);
            for (int p = 0; p < pv.rows; ++p) {
                if (keep[static_cast<size_t>(p)]) continue;
                const double* prow = pv.row(p);
                const double* trow = target.row(p);
                double* grow = gp.row(p);
                for (int c = 0; c < pv.cols; ++c) grow[c] += gs * (prow[c] - trow[c]);
            }
        };
    }
    return id;
}

Tape::NodeId Tape::sqdist(NodeId pred, const Mat& target) {
    const Mat& pv = val(pred);
    if (!pv.same_shape(target)) throw ShapeError("sqdist: shape mismatch");
    double acc = 0.0;
    for (size_t i = 0; i < pv.v.size(); ++i) {
        const double d = pv.v[i] - target.v[i];
        acc += d * d;
    }
    Mat out(1, 1);
    out.v[0] = acc;
    const bool tr = tracked(pred);
    NodeId id = push(std::move(out), tr);
    if (tr) {
        node(id).back = [pred, id, target](Tape& t) {
            const double gs = t.grad(id).v[0] * 2.0;
            const Mat& pv = t.val(pred);
            Mat& gp = t.grad(pred);
            for (size_t i = 0; i < pv.v.size(); ++i) gp.v[i] += gs * (pv.v[i] - target.v[i]);
        };
    }
    return id;
}

Tape::NodeId Tape::cross_entropy_logits(NodeId logits, int label) {
    const Mat& lv = val(logits);
    if (lv.rows != 1) throw ShapeError("cross_entropy: logits must be 1xC");
    if (label < 0 || label >= lv.cols) throw DataError("cross_entropy: label out of range");
    double mx = lv.v[0];
    for (double x : lv.v) mx = std::max(mx, x);
    double sum = 0.0;
    for (double x : lv.v) sum += std::exp(x - mx);
    const double lse = mx + std::log(sum);
    Mat out(1, 1);
    out.v[0] = lse - lv.v[static_cast<size_t>(label)];
    const bool tr = tracked(logits);
    NodeId id = push(std::move(out), tr);
    if (tr) {
        node(id).back = [logits, id, label, mx, sum](Tape& t) {
            const double gs = t.grad(id).v[0];
            const Mat& lv = t.val(logits);
            Mat& gl = t.grad(logits);
            for (int c = 0; c < lv.cols; ++c) {
                const double p = std::exp(lv.v[static_cast<size_t>(c)] - mx) / sum;
                gl.v[static_cast<size_t>(c)] += gs * (p - (c == label ? 1.0 : 0.0));
            }
        };
    }
    return id;
}

Tape::NodeId Tape::bce_logit(NodeId logit, double target) {
    const Mat& lv = val(logit);
    if (lv.rows != 1 || lv.cols != 1) throw ShapeError("bce_logit: logit must be 1x1");
    const double z = lv.v[0];
    // softplus(z) - y*z, computed stably
    const double sp = std::max(z, 0.0) + std::log1p(std::exp(-std::abs(z)));
    Mat out(1, 1);
    out.v[0] = sp - target * z;
    const bool tr = tracked(logit);
    NodeId id = push(std::move(out), tr);
    if (tr) {
        node(id).back = [logit, id, target](Tape& t) {
            const double z = t.val(logit).v[0];
            t.grad(logit).v[0] += t.grad(id).v[0] * (sigmoid_scalar(z) - target);
        };
    }
    return id;
}

void Tape::backward(NodeId root, GradSink& sink) {
    if (!grads_) throw ConfigError("backward on a tape without gradients enabled");
    Node& r = node(root);
    if (r.value().size() != 1) throw ShapeError("backward: root must be scalar");
    if (!r.tracked) return;  // loss does not depend on any tracked value
    r.grad.v[0] = 1.0;
    sink_ = &sink;
    for (int i = static_cast<int>(nodes_.size()) - 1; i >= 0; --i) {
        Node& n = nodes_[static_cast<size_t>(i)];
        if (n.tracked && n.back) n.back(*this);
    }
    sink_ = nullptr;
}

}  // namespace spectrumfm
