#include "eventness/autodiff.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <memory>
#include <stdexcept>

namespace eventness::ad {

namespace {

void require(bool cond, const char* msg) {
    if (!cond) throw std::invalid_argument(msg);
}

}  // namespace

Var Tape::push(Tensor value, BackwardFn backward) {
    Node n;
    n.grad = Tensor(value.shape());
    n.value = std::move(value);
    n.back = std::move(backward);
    nodes_.push_back(std::move(n));
    return Var{nodes_.size() - 1};
}

Var Tape::leaf(Tensor value) { return push(std::move(value), nullptr); }

Var Tape::param(Parameter& p) {
    Var v = push(p.tensor, nullptr);
    nodes_[v.idx].bound = &p;
    return v;
}

Var Tape::conv2d(Var input, Var kernels, std::size_t stride, std::size_t padding) {
    const Tensor& x = value(input);
    const Tensor& w = value(kernels);
    require(x.rank() == 3, "conv2d: input must be [C,H,W]");
    require(w.rank() == 4, "conv2d: kernels must be [C_out,C_in,kh,kw]");
    require(w.dim(1) == x.dim(0), "conv2d: channel mismatch");
    const std::size_t ci_n = x.dim(0), h = x.dim(1), wd = x.dim(2);
    const std::size_t co_n = w.dim(0), kh = w.dim(2), kw = w.dim(3);
    require(kh <= h + 2 * padding && kw <= wd + 2 * padding, "conv2d: kernel exceeds padded input");
    require(stride >= 1, "conv2d: stride must be positive");
    const std::size_t oh = (h + 2 * padding - kh) / stride + 1;
    const std::size_t ow = (wd + 2 * padding - kw) / stride + 1;

    Tensor out({co_n, oh, ow});
    const double* xd = x.data();
    const double* wd_ = w.data();
    double* od = out.data();
    const std::ptrdiff_t pad = static_cast<std::ptrdiff_t>(padding);

    // For a fixed (ky,kx), input row iy = oy*stride + ky - pad and column
    // ix = ox*stride + kx - pad; the ox range keeping ix inside [0,wd) is
    // precomputed so the inner loop is branch-free.
    for (std::size_t co = 0; co < co_n; ++co) {
        for (std::size_t ci = 0; ci < ci_n; ++ci) {
            for (std::size_t ky = 0; ky < kh; ++ky) {
                for (std::size_t kx = 0; kx < kw; ++kx) {
                    const double wv = wd_[((co * ci_n + ci) * kh + ky) * kw + kx];
                    if (wv == 0.0) continue;
                    const std::ptrdiff_t off_x = static_cast<std::ptrdiff_t>(kx) - pad;
                    std::size_t ox_lo = 0;
                    if (off_x < 0) ox_lo = static_cast<std::size_t>((-off_x + static_cast<std::ptrdiff_t>(stride) - 1) / static_cast<std::ptrdiff_t>(stride));
                    std::size_t ox_hi = ow;  // exclusive
                    {
                        const std::ptrdiff_t last = static_cast<std::ptrdiff_t>(wd) - 1 - off_x;
                        if (last < 0) continue;
                        const std::size_t max_ox = static_cast<std::size_t>(last) / stride;
                        ox_hi = std::min(ox_hi, max_ox + 1);
                    }
                    if (ox_lo >= ox_hi) continue;
                    for (std::size_t oy = 0; oy < oh; ++oy) {
                        const std::ptrdiff_t iy = static_cast<std::ptrdiff_t>(oy * stride + ky) - pad;
                        if (iy < 0 || iy >= static_cast<std::ptrdiff_t>(h)) continue;
                        const double* xrow = xd + (ci * h + static_cast<std::size_t>(iy)) * wd;
                        double* orow = od + (co * oh + oy) * ow;
                        if (stride == 1) {
                            const double* xp = xrow + static_cast<std::size_t>(static_cast<std::ptrdiff_t>(ox_lo) + off_x);
                            for (std::size_t ox = ox_lo; ox < ox_hi; ++ox) orow[ox] += wv * xp[ox - ox_lo];
                        } else {
                            for (std::size_t ox = ox_lo; ox < ox_hi; ++ox) {
                                orow[ox] += wv * xrow[static_cast<std::size_t>(static_cast<std::ptrdiff_t>(ox * stride) + off_x)];
                            }
                        }
                    }
                }
            }
        }
    }

    const std::size_t xi = input.idx, wi = kernels.idx;
    return push(std::move(out), [xi, wi, stride, padding](Tape& t, std::size_t self) {
        const Tensor& x = t.value_at(xi);
        const Tensor& w = t.value_at(wi);
        const Tensor& g = t.grad_at(self);
        Tensor& gx = t.grad_at(xi);
        Tensor& gw = t.grad_at(wi);
        const std::size_t ci_n = x.dim(0), h = x.dim(1), wd = x.dim(2);
        const std::size_t co_n = w.dim(0), kh = w.dim(2), kw = w.dim(3);
        const std::size_t oh = g.dim(1), ow = g.dim(2);
        const std::ptrdiff_t pad = static_cast<std::ptrdiff_t>(padding);
        const double* xd = x.data();
        const double* wv_all = w.data();
        const double* gd = g.data();
        double* gxd = gx.data();
        double* gwd = gw.data();
        for (std::size_t co = 0; co < co_n; ++co) {
            for (std::size_t ci = 0; ci < ci_n; ++ci) {
                for (std::size_t ky = 0; ky < kh; ++ky) {
                    for (std::size_t kx = 0; kx < kw; ++kx) {
                        const std::size_t widx = ((co * ci_n + ci) * kh + ky) * kw + kx;
                        const double wv = wv_all[widx];
                        double wacc = 0.0;
                        const std::ptrdiff_t off_x = static_cast<std::ptrdiff_t>(kx) - pad;
                        std::size_t ox_lo = 0;
                        if (off_x < 0) ox_lo = static_cast<std::size_t>((-off_x + static_cast<std::ptrdiff_t>(stride) - 1) / static_cast<std::ptrdiff_t>(stride));
                        const std::ptrdiff_t last = static_cast<std::ptrdiff_t>(wd) - 1 - off_x;
                        if (last < 0) continue;
                        const std::size_t ox_hi = std::min(ow, static_cast<std::size_t>(last) / stride + 1);
                        if (ox_lo >= ox_hi) continue;
                        for (std::size_t oy = 0; oy < oh; ++oy) {
                            const std::ptrdiff_t iy = static_cast<std::ptrdiff_t>(oy * stride + ky) - pad;
                            if (iy < 0 || iy >= static_cast<std::ptrdiff_t>(h)) continue;
                            const std::size_t xbase = (ci * h + static_cast<std::size_t>(iy)) * wd;
                            const double* grow = gd + (co * oh + oy) * ow;
                            for (std::size_t ox = ox_lo; ox < ox_hi; ++ox) {
                                const std::size_t ix = static_cast<std::size_t>(static_cast<std::ptrdiff_t>(ox * stride) + off_x);
                                const double go = grow[ox];
                                gxd[xbase + ix] += wv * go;
                                wacc += xd[xbase + ix] * go;
                            }
                        }
                        gwd[widx] += wacc;
                    }
                }
            }
        }
    });
}

Var Tape::bias_add(Var input, Var bias) {
    const Tensor& x = value(input);
    const Tensor& b = value(bias);
    require(x.rank() == 3 && b.rank() == 1 && b.dim(0) == x.dim(0), "bias_add: shapes must be [C,H,W] and [C]");
    Tensor out = x;
    const std::size_t c_n = x.dim(0), plane = x.dim(1) * x.dim(2);
    double* od = out.data();
    for (std::size_t c = 0; c < c_n; ++c) {
        const double bv = b[c];
        for (std::size_t i = 0; i < plane; ++i) od[c * plane + i] += bv;
    }
    const std::size_t xi = input.idx, bi = bias.idx;
    return push(std::move(out), [xi, bi, c_n, plane](Tape& t, std::size_t self) {
        const Tensor& g = t.grad_at(self);
        Tensor& gx = t.grad_at(xi);
        Tensor& gb = t.grad_at(bi);
        const double* gd = g.data();
        double* gxd = gx.data();
        for (std::size_t i = 0; i < g.size(); ++i) gxd[i] += gd[i];
        for (std::size_t c = 0; c < c_n; ++c) {
            double acc = 0.0;
            for (std::size_t i = 0; i < plane; ++i) acc += gd[c * plane + i];
            gb[c] += acc;
        }
    });
}

Var Tape::maxpool2d(Var input, std::size_t window, std::size_t stride) {
    const Tensor& x = value(input);
    require(x.rank() == 3, "maxpool2d: input must be [C,H,W]");
    require(window >= 1 && stride >= 1, "maxpool2d: window and stride must be positive");
    const std::size_t c_n = x.dim(0), h = x.dim(1), w = x.dim(2);
    require(window <= h && window <= w, "maxpool2d: window larger than input");
    const std::size_t oh = (h - window) / stride + 1;
    const std::size_t ow = (w - window) / stride + 1;

    Tensor out({c_n, oh, ow});
    auto argmax = std::make_shared<std::vector<std::size_t>>(out.size());
    const double* xd = x.data();
    double* od = out.data();
    for (std::size_t c = 0; c < c_n; ++c) {
        for (std::size_t oy = 0; oy < oh; ++oy) {
            for (std::size_t ox = 0; ox < ow; ++ox) {
                double best = -std::numeric_limits<double>::infinity();
                std::size_t best_idx = 0;
                for (std::size_t ky = 0; ky < window; ++ky) {
                    for (std::size_t kx = 0; kx < window; ++kx) {
                        const std::size_t idx = (c * h + oy * stride + ky) * w + ox * stride + kx;
                        if (xd[idx] > best) {  // strict: first max wins ties
                            best = xd[idx];
                            best_idx = idx;
                        }
                    }
                }
                const std::size_t o = (c * oh + oy) * ow + ox;
                od[o] = best;
                (*argmax)[o] = best_idx;
            }
        }
    }
    const std::size_t xi = input.idx;
    return push(std::move(out), [xi, argmax](Tape& t, std::size_t self) {
        const Tensor& g = t.grad_at(self);
        Tensor& gx = t.grad_at(xi);
        const double* gd = g.data();
        double* gxd = gx.data();
        for (std::size_t o = 0; o < g.size(); ++o) gxd[(*argmax)[o]] += gd[o];
    });
}

Var Tape::relu(Var input) {
    const Tensor& x = value(input);
    Tensor out = x;
    for (std::size_t i = 0; i < out.size(); ++i) {
        if (out[i] < 0.0) out[i] = 0.0;
    }
    const std::size_t xi = input.idx;
    return push(std::move(out), [xi](Tape& t, std::size_t self) {
        const Tensor& g = t.grad_at(self);
        const Tensor& x = t.value_at(xi);
        Tensor& gx = t.grad_at(xi);
        for (std::size_t i = 0; i < g.size(); ++i) {
            if (x[i] > 0.0) gx[i] += g[i];
        }
    });
}

Var Tape::linear(Var input, Var weights, Var bias) {
    const Tensor& x = value(input);
    const Tensor& w = value(weights);
    const Tensor& b = value(bias);
    require(x.rank() == 1 && w.rank() == 2 && b.rank() == 1, "linear: shapes must be [N], [M,N], [M]");
    require(w.dim(1) == x.dim(0) && w.dim(0) == b.dim(0), "linear: dimension mismatch");
    const std::size_t m = w.dim(0), n = w.dim(1);
    Tensor out({m});
    const double* xd = x.data();
    const double* wd = w.data();
    for (std::size_t i = 0; i < m; ++i) {
        double acc = b[i];
        const double* wrow = wd + i * n;
        for (std::size_t j = 0; j < n; ++j) acc += wrow[j] * xd[j];
        out[i] = acc;
    }
    const std::size_t xi = input.idx, wi = weights.idx, bi = bias.idx;
    return push(std::move(out), [xi, wi, bi, m, n](Tape& t, std::size_t self) {
        const Tensor& g = t.grad_at(self);
        const Tensor& x = t.value_at(xi);
        const Tensor& w = t.value_at(wi);
        Tensor& gx = t.grad_at(xi);
        Tensor& gw = t.grad_at(wi);
        Tensor& gb = t.grad_at(bi);
        const double* wd = w.data();
        double* gwd = gw.data();
        for (std::size_t i = 0; i < m; ++i) {
            const double gi = g[i];
            gb[i] += gi;
            const double* wrow = wd + i * n;
            double* gwrow = gwd + i * n;
            for (std::size_t j = 0; j < n; ++j) {
                gx[j] += gi * wrow[j];
                gwrow[j] += gi * x[j];
            }
        }
    });
}

Var Tape::softmax(Var input) {
    const Tensor& x = value(input);
    require(x.rank() == 1, "softmax: input must be rank 1");
    Tensor out(x.shape());
    double mx = x[0];
    for (std::size_t i = 1; i < x.size(); ++i) mx = std::max(mx, x[i]);
    double denom = 0.0;
    for (std::size_t i = 0; i < x.size(); ++i) {
        out[i] = std::exp(x[i] - mx);
        denom += out[i];
    }
    for (std::size_t i = 0; i < out.size(); ++i) out[i] /= denom;
    const std::size_t xi = input.idx;
    return push(std::move(out), [xi](Tape& t, std::size_t self) {
        const Tensor& g = t.grad_at(self);
        const Tensor& y = t.value_at(self);
        Tensor& gx = t.grad_at(xi);
        double dot = 0.0;
        for (std::size_t i = 0; i < g.size(); ++i) dot += g[i] * y[i];
        for (std::size_t i = 0; i < g.size(); ++i) gx[i] += y[i] * (g[i] - dot);
    });
}

Var Tape::cross_entropy(Var logits, std::size_t target) {
    const Tensor& x = value(logits);
    require(x.rank() == 1, "cross_entropy: logits must be rank 1");
    require(target < x.dim(0), "cross_entropy: target class out of range");
    double mx = x[0];
    for (std::size_t i = 1; i < x.size(); ++i) mx = std::max(mx, x[i]);
    double denom = 0.0;
    for (std::size_t i = 0; i < x.size(); ++i) denom += std::exp(x[i] - mx);
    const double loss = mx + std::log(denom) - x[target];
    const std::size_t xi = logits.idx;
    return push(Tensor::scalar(loss), [xi, target, mx, denom](Tape& t, std::size_t self) {
        const double g = t.grad_at(self)[0];
        const Tensor& x = t.value_at(xi);
        Tensor& gx = t.grad_at(xi);
        for (std::size_t i = 0; i < x.size(); ++i) {
            double p = std::exp(x[i] - mx) / denom;
            if (i == target) p -= 1.0;
            gx[i] += g * p;
        }
    });
}

Var Tape::smooth_l1(Var pred, const Tensor& target) {
    const Tensor& p = value(pred);
    require(p.shape() == target.shape(), "smooth_l1: shape mismatch");
    double loss = 0.0;
    for (std::size_t i = 0; i < p.size(); ++i) {
        const double d = std::abs(p[i] - target[i]);
        loss += d < 1.0 ? 0.5 * d * d : d - 0.5;
    }
    const std::size_t pi = pred.idx;
    Tensor tgt = target;
    return push(Tensor::scalar(loss), [pi, tgt = std::move(tgt)](Tape& t, std::size_t self) {
        const double g = t.grad_at(self)[0];
        const Tensor& p = t.value_at(pi);
        Tensor& gp = t.grad_at(pi);
        for (std::size_t i = 0; i < p.size(); ++i) {
            const double d = p[i] - tgt[i];
            const double slope = std::abs(d) < 1.0 ? d : (d > 0.0 ? 1.0 : -1.0);
            gp[i] += g * slope;
        }
    });
}

Var Tape::anchor_rows(Var input, std::size_t k, std::size_t m) {
    const Tensor& x = value(input);
    require(x.rank() == 3 && x.dim(0) == k * m, "anchor_rows: input must be [k*m,H,W]");
    const std::size_t h = x.dim(1), w = x.dim(2);
    Tensor out({h * w * k, m});
    for (std::size_t i = 0; i < h; ++i) {
        for (std::size_t j = 0; j < w; ++j) {
            for (std::size_t a = 0; a < k; ++a) {
                const std::size_t r = (i * w + j) * k + a;
                for (std::size_t d = 0; d < m; ++d) out.at(r, d) = x.at(a * m + d, i, j);
            }
        }
    }
    const std::size_t xi = input.idx;
    return push(std::move(out), [xi, k, m, h, w](Tape& t, std::size_t self) {
        const Tensor& g = t.grad_at(self);
        Tensor& gx = t.grad_at(xi);
        for (std::size_t i = 0; i < h; ++i) {
            for (std::size_t j = 0; j < w; ++j) {
                for (std::size_t a = 0; a < k; ++a) {
                    const std::size_t r = (i * w + j) * k + a;
                    for (std::size_t d = 0; d < m; ++d) gx.at(a * m + d, i, j) += g.at(r, d);
                }
            }
        }
    });
}

Var Tape::row(Var input, std::size_t i) {
    const Tensor& x = value(input);
    require(x.rank() == 2 && i < x.dim(0), "row: index out of range");
    const std::size_t m = x.dim(1);
    Tensor out({m});
    for (std::size_t j = 0; j < m; ++j) out[j] = x.at(i, j);
    const std::size_t xi = input.idx;
    return push(std::move(out), [xi, i, m](Tape& t, std::size_t self) {
        const Tensor& g = t.grad_at(self);
        Tensor& gx = t.grad_at(xi);
        for (std::size_t j = 0; j < m; ++j) gx.at(i, j) += g[j];
    });
}

Var Tape::add(Var a, Var b) {
    const Tensor& xa = value(a);
    const Tensor& xb = value(b);
    require(xa.same_shape(xb), "add: shape mismatch");
    Tensor out = xa;
    for (std::size_t i = 0; i < out.size(); ++i) out[i] += xb[i];
    const std::size_t ai = a.idx, bi = b.idx;
    return push(std::move(out), [ai, bi](Tape& t, std::size_t self) {
        const Tensor& g = t.grad_at(self);
        Tensor& ga = t.grad_at(ai);
        Tensor& gb = t.grad_at(bi);
        for (std::size_t i = 0; i < g.size(); ++i) {
            ga[i] += g[i];
            gb[i] += g[i];
        }
    });
}

Var Tape::scale(Var a, double c) {
    Tensor out = value(a);
    for (std::size_t i = 0; i < out.size(); ++i) out[i] *= c;
    const std::size_t ai = a.idx;
    return push(std::move(out), [ai, c](Tape& t, std::size_t self) {
        const Tensor& g = t.grad_at(self);
        Tensor& ga = t.grad_at(ai);
        for (std::size_t i = 0; i < g.size(); ++i) ga[i] += c * g[i];
    });
}

Var Tape::sum(Var a) {
    const Tensor& x = value(a);
    double acc = 0.0;
    for (std::size_t i = 0; i < x.size(); ++i) acc += x[i];
    const std::size_t ai = a.idx;
    return push(Tensor::scalar(acc), [ai](Tape& t, std::size_t self) {
        const double g = t.grad_at(self)[0];
        Tensor& ga = t.grad_at(ai);
        for (std::size_t i = 0; i < ga.size(); ++i) ga[i] += g;
    });
}

Var Tape::average(const std::vector<Var>& scalars) {
    require(!scalars.empty(), "average: empty input");
    double acc = 0.0;
    std::vector<std::size_t> idxs;
    idxs.reserve(scalars.size());
    for (Var v : scalars) {
        require(value(v).size() == 1, "average: inputs must be scalars");
        acc += value(v)[0];
        idxs.push_back(v.idx);
    }
    const double inv = 1.0 / static_cast<double>(scalars.size());
    return push(Tensor::scalar(acc * inv), [idxs = std::move(idxs), inv](Tape& t, std::size_t self) {
        const double g = t.grad_at(self)[0] * inv;
        for (std::size_t i : idxs) t.grad_at(i)[0] += g;
    });
}

Var Tape::reshape(Var a, std::vector<std::size_t> shape) {
    const Tensor& x = value(a);
    require(Tensor::count(shape) == x.size(), "reshape: element count mismatch");
    Tensor out(std::move(shape), x.values());
    const std::size_t ai = a.idx;
    return push(std::move(out), [ai](Tape& t, std::size_t self) {
        const Tensor& g = t.grad_at(self);
        Tensor& ga = t.grad_at(ai);
        for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i];
    });
}

void Tape::backward(Var loss) {
    require(loss.idx < nodes_.size(), "backward: invalid node");
    require(nodes_[loss.idx].value.size() == 1, "backward requires a scalar loss");
    for (Node& n : nodes_) n.grad.fill(0.0);
    nodes_[loss.idx].grad[0] = 1.0;
    for (std::size_t i = loss.idx + 1; i-- > 0;) {
        if (nodes_[i].back) nodes_[i].back(*this, i);
    }
    for (Node& n : nodes_) {
        if (n.bound == nullptr) continue;
        Tensor& g = n.bound->gradient;
        for (std::size_t i = 0; i < g.size(); ++i) g[i] += n.grad[i];
    }
}

void SgdOptimizer::step(const std::vector<Parameter*>& params) {
    for (Parameter* p : params) {
        auto it = velocity_.find(p);
        if (it == velocity_.end()) it = velocity_.emplace(p, Tensor(p->tensor.shape())).first;
        Tensor& v = it->second;
        for (std::size_t i = 0; i < v.size(); ++i) {
            v[i] = momentum_ * v[i] - lr_ * p->gradient[i];
            p->tensor[i] += v[i];
        }
    }
}

void SgdOptimizer::zero_grad(const std::vector<Parameter*>& params) {
    for (Parameter* p : params) p->zero_grad();
}

void init_he_uniform(Tensor& t, std::size_t fan_in, Rng& rng) {
    const double bound = std::sqrt(6.0 / static_cast<double>(fan_in));
    for (std::size_t i = 0; i < t.size(); ++i) t[i] = rng.uniform(-bound, bound);
}

}  // namespace eventness::ad
