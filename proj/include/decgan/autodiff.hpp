#pragma once

#include <Eigen/Dense>
#include <algorithm>
#include <functional>
#include <memory>
#include <stdexcept>
#include <unordered_set>
#include <vector>

#include "decgan/tensor.hpp"

namespace decgan {

// Reverse-mode autodiff over Tensor<T>. Graphs are built per forward pass;
// backward(root) overwrites the gradients of everything reachable from root,
// so callers step their optimizer before building the next graph.

template <typename T>
struct Node;

template <typename T>
using Var = std::shared_ptr<Node<T>>;

template <typename T>
struct Node {
    Tensor<T> value;
    Tensor<T> grad;
    bool requires_grad = false;
    bool has_grad = false;
    std::vector<Var<T>> parents;
    std::function<void(Node<T>&)> backprop;

    void accum_grad(const Tensor<T>& g) {
        if (!requires_grad) return;
        if (!has_grad) {
            grad = Tensor<T>(value.shape());
            has_grad = true;
        }
        T* d = grad.data();
        const T* s = g.data();
        for (size_t i = 0; i < grad.size(); ++i) d[i] += s[i];
    }
};

template <typename T>
Var<T> make_leaf(Tensor<T> value, bool requires_grad) {
    auto n = std::make_shared<Node<T>>();
    n->value = std::move(value);
    n->requires_grad = requires_grad;
    return n;
}

template <typename T>
Var<T> make_const(Tensor<T> value) {
    return make_leaf(std::move(value), false);
}

template <typename T>
Var<T> detach(const Var<T>& v) {
    return make_const(v->value);
}

namespace detail {

template <typename T>
Var<T> make_op(Tensor<T> value, std::vector<Var<T>> parents,
               std::function<void(Node<T>&)> backprop) {
    auto n = std::make_shared<Node<T>>();
    n->value = std::move(value);
    for (const auto& p : parents)
        if (p->requires_grad) n->requires_grad = true;
    if (n->requires_grad) {
        n->parents = std::move(parents);
        n->backprop = std::move(backprop);
    }
    return n;
}

template <typename T>
using RowMat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename T>
using MapMat = Eigen::Map<RowMat<T>>;
template <typename T>
using CMapMat = Eigen::Map<const RowMat<T>>;

}  // namespace detail

// Runs one reverse sweep from a scalar root. Gradients of all nodes reachable
// from root are overwritten (not accumulated across calls).
template <typename T>
void backward(const Var<T>& root) {
    if (root->value.size() != 1)
        throw std::invalid_argument("backward: root must be a scalar");
    if (!root->requires_grad) return;

    // iterative DFS topological order
    std::vector<Node<T>*> topo;
    std::unordered_set<Node<T>*> visited;
    std::vector<std::pair<Node<T>*, size_t>> stack;
    stack.push_back({root.get(), 0});
    visited.insert(root.get());
    while (!stack.empty()) {
        auto& [n, i] = stack.back();
        if (i < n->parents.size()) {
            Node<T>* p = n->parents[i].get();
            ++i;
            if (p->requires_grad && !visited.count(p)) {
                visited.insert(p);
                stack.push_back({p, 0});
            }
        } else {
            topo.push_back(n);
            stack.pop_back();
        }
    }
    for (Node<T>* n : topo) n->has_grad = false;
    root->accum_grad(Tensor<T>::scalar(T(1)));
    for (auto it = topo.rbegin(); it != topo.rend(); ++it) {
        Node<T>* n = *it;
        if (n->has_grad && n->backprop) n->backprop(*n);
    }
}

// ---- elementwise ----

template <typename T>
Var<T> add(const Var<T>& a, const Var<T>& b) {
    check_same_shape(a->value, b->value, "add");
    Tensor<T> out = a->value;
    for (size_t i = 0; i < out.size(); ++i) out[i] += b->value[i];
    return detail::make_op<T>(std::move(out), {a, b}, [](Node<T>& self) {
        self.parents[0]->accum_grad(self.grad);
        self.parents[1]->accum_grad(self.grad);
    });
}

template <typename T>
Var<T> sub(const Var<T>& a, const Var<T>& b) {
    check_same_shape(a->value, b->value, "sub");
    Tensor<T> out = a->value;
    for (size_t i = 0; i < out.size(); ++i) out[i] -= b->value[i];
    return detail::make_op<T>(std::move(out), {a, b}, [](Node<T>& self) {
        self.parents[0]->accum_grad(self.grad);
        Tensor<T> g = self.grad;
        for (size_t i = 0; i < g.size(); ++i) g[i] = -g[i];
        self.parents[1]->accum_grad(g);
    });
}

template <typename T>
Var<T> mul(const Var<T>& a, const Var<T>& b) {
    check_same_shape(a->value, b->value, "mul");
    Tensor<T> out = a->value;
    for (size_t i = 0; i < out.size(); ++i) out[i] *= b->value[i];
    return detail::make_op<T>(std::move(out), {a, b}, [](Node<T>& self) {
        Tensor<T> ga(self.grad.shape()), gb(self.grad.shape());
        const Tensor<T>& av = self.parents[0]->value;
        const Tensor<T>& bv = self.parents[1]->value;
        for (size_t i = 0; i < self.grad.size(); ++i) {
            ga[i] = self.grad[i] * bv[i];
            gb[i] = self.grad[i] * av[i];
        }
        self.parents[0]->accum_grad(ga);
        self.parents[1]->accum_grad(gb);
    });
}

template <typename T>
Var<T> scale(const Var<T>& a, T c) {
    Tensor<T> out = a->value;
    for (size_t i = 0; i < out.size(); ++i) out[i] *= c;
    return detail::make_op<T>(std::move(out), {a}, [c](Node<T>& self) {
        Tensor<T> g = self.grad;
        for (size_t i = 0; i < g.size(); ++i) g[i] *= c;
        self.parents[0]->accum_grad(g);
    });
}

template <typename T>
Var<T> add_scalar(const Var<T>& a, T c) {
    Tensor<T> out = a->value;
    for (size_t i = 0; i < out.size(); ++i) out[i] += c;
    return detail::make_op<T>(std::move(out), {a}, [](Node<T>& self) {
        self.parents[0]->accum_grad(self.grad);
    });
}

template <typename T>
Var<T> exp_op(const Var<T>& a) {
    Tensor<T> out = a->value;
    for (size_t i = 0; i < out.size(); ++i) out[i] = std::exp(out[i]);
    return detail::make_op<T>(std::move(out), {a}, [](Node<T>& self) {
        Tensor<T> g = self.grad;
        for (size_t i = 0; i < g.size(); ++i) g[i] *= self.value[i];
        self.parents[0]->accum_grad(g);
    });
}

template <typename T>
Var<T> clamp_op(const Var<T>& a, T lo, T hi) {
    Tensor<T> out = a->value;
    for (size_t i = 0; i < out.size(); ++i) out[i] = std::min(hi, std::max(lo, out[i]));
    return detail::make_op<T>(std::move(out), {a}, [lo, hi](Node<T>& self) {
        Tensor<T> g = self.grad;
        const Tensor<T>& x = self.parents[0]->value;
        for (size_t i = 0; i < g.size(); ++i)
            if (x[i] < lo || x[i] > hi) g[i] = T(0);
        self.parents[0]->accum_grad(g);
    });
}

template <typename T>
Var<T> relu(const Var<T>& a) {
    Tensor<T> out = a->value;
    for (size_t i = 0; i < out.size(); ++i) out[i] = std::max(T(0), out[i]);
    return detail::make_op<T>(std::move(out), {a}, [](Node<T>& self) {
        Tensor<T> g = self.grad;
        const Tensor<T>& x = self.parents[0]->value;
        for (size_t i = 0; i < g.size(); ++i)
            if (x[i] <= T(0)) g[i] = T(0);
        self.parents[0]->accum_grad(g);
    });
}

template <typename T>
Var<T> leaky_relu(const Var<T>& a, T slope) {
    Tensor<T> out = a->value;
    for (size_t i = 0; i < out.size(); ++i)
        if (out[i] < T(0)) out[i] *= slope;
    return detail::make_op<T>(std::move(out), {a}, [slope](Node<T>& self) {
        Tensor<T> g = self.grad;
        const Tensor<T>& x = self.parents[0]->value;
        for (size_t i = 0; i < g.size(); ++i)
            if (x[i] < T(0)) g[i] *= slope;
        self.parents[0]->accum_grad(g);
    });
}

template <typename T>
Var<T> tanh_op(const Var<T>& a) {
    Tensor<T> out = a->value;
    for (size_t i = 0; i < out.size(); ++i) out[i] = std::tanh(out[i]);
    return detail::make_op<T>(std::move(out), {a}, [](Node<T>& self) {
        Tensor<T> g = self.grad;
        for (size_t i = 0; i < g.size(); ++i) g[i] *= (T(1) - self.value[i] * self.value[i]);
        self.parents[0]->accum_grad(g);
    });
}

template <typename T>
Var<T> reshape(const Var<T>& a, std::vector<int64_t> shape) {
    Tensor<T> out = a->value.reshaped(std::move(shape));
    return detail::make_op<T>(std::move(out), {a}, [](Node<T>& self) {
        self.parents[0]->accum_grad(self.grad.reshaped(self.parents[0]->value.shape()));
    });
}

// ---- dense ----

// x: B x K, W: M x K (out x in), b: M  ->  B x M
template <typename T>
Var<T> linear(const Var<T>& x, const Var<T>& W, const Var<T>& b) {
    const auto& xs = x->value.shape();
    const auto& ws = W->value.shape();
    if (xs.size() != 2 || ws.size() != 2 || xs[1] != ws[1] ||
        b->value.numel() != ws[0])
        throw std::invalid_argument("linear: shape mismatch");
    int64_t B = xs[0], K = xs[1], M = ws[0];
    Tensor<T> out({B, M});
    detail::CMapMat<T> Xm(x->value.data(), B, K);
    detail::CMapMat<T> Wm(W->value.data(), M, K);
    detail::MapMat<T> Ym(out.data(), B, M);
    Ym.noalias() = Xm * Wm.transpose();
    Ym.rowwise() += Eigen::Map<const Eigen::Matrix<T, 1, Eigen::Dynamic>>(b->value.data(), M);
    return detail::make_op<T>(std::move(out), {x, W, b}, [B, K, M](Node<T>& self) {
        detail::CMapMat<T> Gm(self.grad.data(), B, M);
        detail::CMapMat<T> Xm(self.parents[0]->value.data(), B, K);
        detail::CMapMat<T> Wm(self.parents[1]->value.data(), M, K);
        if (self.parents[0]->requires_grad) {
            Tensor<T> gx({B, K});
            detail::MapMat<T>(gx.data(), B, K).noalias() = Gm * Wm;
            self.parents[0]->accum_grad(gx);
        }
        if (self.parents[1]->requires_grad) {
            Tensor<T> gw({M, K});
            detail::MapMat<T>(gw.data(), M, K).noalias() = Gm.transpose() * Xm;
            self.parents[1]->accum_grad(gw);
        }
        if (self.parents[2]->requires_grad) {
            Tensor<T> gb({M});
            Eigen::Map<Eigen::Matrix<T, 1, Eigen::Dynamic>>(gb.data(), M) = Gm.colwise().sum();
            self.parents[2]->accum_grad(gb);
        }
    });
}

// ---- convolution helpers ----

namespace detail {

inline int64_t conv_out_dim(int64_t in, int64_t k, int64_t stride, int64_t pad) {
    return (in + 2 * pad - k) / stride + 1;
}

// (B,C,H,W) -> rows C*KH*KW, cols B*OH*OW
template <typename T>
Tensor<T> im2col(const Tensor<T>& x, int64_t k, int64_t stride, int64_t pad) {
    int64_t B = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
    int64_t OH = conv_out_dim(H, k, stride, pad), OW = conv_out_dim(W, k, stride, pad);
    Tensor<T> cols({C * k * k, B * OH * OW});
    T* dst = cols.data();
    int64_t ncol = B * OH * OW;
    for (int64_t c = 0; c < C; ++c)
        for (int64_t kh = 0; kh < k; ++kh)
            for (int64_t kw = 0; kw < k; ++kw) {
                T* row = dst + ((c * k + kh) * k + kw) * ncol;
                for (int64_t b = 0; b < B; ++b)
                    for (int64_t oh = 0; oh < OH; ++oh) {
                        int64_t ih = oh * stride + kh - pad;
                        T* out = row + (b * OH + oh) * OW;
                        if (ih < 0 || ih >= H) {
                            for (int64_t ow = 0; ow < OW; ++ow) out[ow] = T(0);
                            continue;
                        }
                        const T* src = x.data() + ((b * C + c) * H + ih) * W;
                        for (int64_t ow = 0; ow < OW; ++ow) {
                            int64_t iw = ow * stride + kw - pad;
                            out[ow] = (iw < 0 || iw >= W) ? T(0) : src[iw];
                        }
                    }
            }
    return cols;
}

// adjoint of im2col: scatter-add cols back into an image of shape (B,C,H,W)
template <typename T>
Tensor<T> col2im(const Tensor<T>& cols, int64_t B, int64_t C, int64_t H, int64_t W,
                 int64_t k, int64_t stride, int64_t pad) {
    int64_t OH = conv_out_dim(H, k, stride, pad), OW = conv_out_dim(W, k, stride, pad);
    Tensor<T> img({B, C, H, W});
    const T* src = cols.data();
    int64_t ncol = B * OH * OW;
    for (int64_t c = 0; c < C; ++c)
        for (int64_t kh = 0; kh < k; ++kh)
            for (int64_t kw = 0; kw < k; ++kw) {
                const T* row = src + ((c * k + kh) * k + kw) * ncol;
                for (int64_t b = 0; b < B; ++b)
                    for (int64_t oh = 0; oh < OH; ++oh) {
                        int64_t ih = oh * stride + kh - pad;
                        if (ih < 0 || ih >= H) continue;
                        const T* in = row + (b * OH + oh) * OW;
                        T* dst = img.data() + ((b * C + c) * H + ih) * W;
                        for (int64_t ow = 0; ow < OW; ++ow) {
                            int64_t iw = ow * stride + kw - pad;
                            if (iw >= 0 && iw < W) dst[iw] += in[ow];
                        }
                    }
            }
    return img;
}

// (B,C,H,W) -> mat C x (B*H*W)
template <typename T>
Tensor<T> nchw_to_cmat(const Tensor<T>& x) {
    int64_t B = x.dim(0), C = x.dim(1), HW = x.dim(2) * x.dim(3);
    Tensor<T> m({C, B * HW});
    for (int64_t b = 0; b < B; ++b)
        for (int64_t c = 0; c < C; ++c)
            std::copy(x.data() + (b * C + c) * HW, x.data() + (b * C + c + 1) * HW,
                      m.data() + c * (B * HW) + b * HW);
    return m;
}

template <typename T>
Tensor<T> cmat_to_nchw(const Tensor<T>& m, int64_t B, int64_t C, int64_t H, int64_t W) {
    int64_t HW = H * W;
    Tensor<T> x({B, C, H, W});
    for (int64_t b = 0; b < B; ++b)
        for (int64_t c = 0; c < C; ++c)
            std::copy(m.data() + c * (B * HW) + b * HW, m.data() + c * (B * HW) + (b + 1) * HW,
                      x.data() + (b * C + c) * HW);
    return x;
}

// OC x (B*OH*OW) -> (B,OC,OH,OW); same permutation as cmat_to_nchw
template <typename T>
Tensor<T> scatter_rows_to_nchw(const Tensor<T>& m, int64_t B, int64_t OC, int64_t OH, int64_t OW) {
    return cmat_to_nchw(m, B, OC, OH, OW);
}

}  // namespace detail

// x: (B,IC,H,W), W: (OC,IC,k,k), b: (OC). Stride/pad per caller.
template <typename T>
Var<T> conv2d(const Var<T>& x, const Var<T>& W, const Var<T>& b, int64_t stride, int64_t pad) {
    const auto& xs = x->value.shape();
    const auto& ws = W->value.shape();
    if (xs.size() != 4 || ws.size() != 4 || xs[1] != ws[1] || ws[2] != ws[3] ||
        b->value.numel() != ws[0])
        throw std::invalid_argument("conv2d: shape mismatch");
    int64_t B = xs[0], IC = xs[1], H = xs[2], Wd = xs[3];
    int64_t OC = ws[0], k = ws[2];
    int64_t OH = detail::conv_out_dim(H, k, stride, pad);
    int64_t OW = detail::conv_out_dim(Wd, k, stride, pad);
    if (OH <= 0 || OW <= 0) throw std::invalid_argument("conv2d: output would be empty");

    Tensor<T> cols = detail::im2col(x->value, k, stride, pad);
    int64_t kk = IC * k * k, ncol = B * OH * OW;
    Tensor<T> ymat({OC, ncol});
    {
        detail::CMapMat<T> Wm(W->value.data(), OC, kk);
        detail::CMapMat<T> Cm(cols.data(), kk, ncol);
        detail::MapMat<T>(ymat.data(), OC, ncol).noalias() = Wm * Cm;
    }
    Tensor<T> out = detail::scatter_rows_to_nchw(ymat, B, OC, OH, OW);
    {
        const T* bias = b->value.data();
        for (int64_t bi = 0; bi < B; ++bi)
            for (int64_t oc = 0; oc < OC; ++oc) {
                T* p = out.data() + (bi * OC + oc) * OH * OW;
                for (int64_t i = 0; i < OH * OW; ++i) p[i] += bias[oc];
            }
    }
    auto bp = [cols = std::move(cols), B, IC, H, Wd, OC, k, stride, pad, kk,
               ncol](Node<T>& self) {
        int64_t OH = detail::conv_out_dim(H, k, stride, pad);
        int64_t OW = detail::conv_out_dim(Wd, k, stride, pad);
        Tensor<T> gmat = detail::nchw_to_cmat(self.grad);  // OC x ncol
        if (self.parents[1]->requires_grad) {
            Tensor<T> gw({OC, kk});
            detail::CMapMat<T> Gm(gmat.data(), OC, ncol);
            detail::CMapMat<T> Cm(cols.data(), kk, ncol);
            detail::MapMat<T>(gw.data(), OC, kk).noalias() = Gm * Cm.transpose();
            self.parents[1]->accum_grad(gw.reshaped(self.parents[1]->value.shape()));
        }
        if (self.parents[2]->requires_grad) {
            Tensor<T> gb({OC});
            for (int64_t oc = 0; oc < OC; ++oc) {
                T s = T(0);
                const T* p = gmat.data() + oc * ncol;
                for (int64_t i = 0; i < ncol; ++i) s += p[i];
                gb[static_cast<size_t>(oc)] = s;
            }
            self.parents[2]->accum_grad(gb);
        }
        if (self.parents[0]->requires_grad) {
            Tensor<T> gcols({kk, ncol});
            detail::CMapMat<T> Wm(self.parents[1]->value.data(), OC, kk);
            detail::CMapMat<T> Gm(gmat.data(), OC, ncol);
            detail::MapMat<T>(gcols.data(), kk, ncol).noalias() = Wm.transpose() * Gm;
            self.parents[0]->accum_grad(detail::col2im(gcols, B, IC, H, Wd, k, stride, pad));
        }
    };
    return detail::make_op<T>(std::move(out), {x, W, b}, std::move(bp));
}

// Fractionally-strided (transposed) convolution.
// x: (B,IC,H,W), W: (IC,OC,k,k), b: (OC). out: (B,OC,(H-1)*s-2p+k, ...)
template <typename T>
Var<T> conv_transpose2d(const Var<T>& x, const Var<T>& W, const Var<T>& b, int64_t stride,
                        int64_t pad) {
    const auto& xs = x->value.shape();
    const auto& ws = W->value.shape();
    if (xs.size() != 4 || ws.size() != 4 || xs[1] != ws[0] || ws[2] != ws[3] ||
        b->value.numel() != ws[1])
        throw std::invalid_argument("conv_transpose2d: shape mismatch");
    int64_t B = xs[0], IC = xs[1], H = xs[2], Wd = xs[3];
    int64_t OC = ws[1], k = ws[2];
    int64_t OH = (H - 1) * stride - 2 * pad + k;
    int64_t OW = (Wd - 1) * stride - 2 * pad + k;
    if (OH <= 0 || OW <= 0) throw std::invalid_argument("conv_transpose2d: output would be empty");

    int64_t kk = OC * k * k, ncol = B * H * Wd;
    Tensor<T> xmat = detail::nchw_to_cmat(x->value);  // IC x ncol
    Tensor<T> cols({kk, ncol});
    {
        detail::CMapMat<T> Wm(W->value.data(), IC, kk);
        detail::CMapMat<T> Xm(xmat.data(), IC, ncol);
        detail::MapMat<T>(cols.data(), kk, ncol).noalias() = Wm.transpose() * Xm;
    }
    Tensor<T> out = detail::col2im(cols, B, OC, OH, OW, k, stride, pad);
    {
        const T* bias = b->value.data();
        for (int64_t bi = 0; bi < B; ++bi)
            for (int64_t oc = 0; oc < OC; ++oc) {
                T* p = out.data() + (bi * OC + oc) * OH * OW;
                for (int64_t i = 0; i < OH * OW; ++i) p[i] += bias[oc];
            }
    }
    auto bp = [xmat = std::move(xmat), B, IC, OC, k, stride, pad, kk, ncol, OH,
               OW](Node<T>& self) {
        Tensor<T> gcols = detail::im2col(self.grad, k, stride, pad);  // kk x ncol
        if (self.parents[1]->requires_grad) {
            Tensor<T> gw({IC, kk});
            detail::CMapMat<T> Xm(xmat.data(), IC, ncol);
            detail::CMapMat<T> Gc(gcols.data(), kk, ncol);
            detail::MapMat<T>(gw.data(), IC, kk).noalias() = Xm * Gc.transpose();
            self.parents[1]->accum_grad(gw.reshaped(self.parents[1]->value.shape()));
        }
        if (self.parents[2]->requires_grad) {
            Tensor<T> gb({OC});
            for (int64_t oc = 0; oc < OC; ++oc) {
                T s = T(0);
                for (int64_t bi = 0; bi < B; ++bi) {
                    const T* p = self.grad.data() + (bi * OC + oc) * OH * OW;
                    for (int64_t i = 0; i < OH * OW; ++i) s += p[i];
                }
                gb[static_cast<size_t>(oc)] = s;
            }
            self.parents[2]->accum_grad(gb);
        }
        if (self.parents[0]->requires_grad) {
            const auto& xs2 = self.parents[0]->value.shape();
            Tensor<T> gx({IC, ncol});
            detail::CMapMat<T> Wm(self.parents[1]->value.data(), IC, kk);
            detail::CMapMat<T> Gc(gcols.data(), kk, ncol);
            detail::MapMat<T>(gx.data(), IC, ncol).noalias() = Wm * Gc;
            self.parents[0]->accum_grad(detail::cmat_to_nchw(gx, xs2[0], xs2[1], xs2[2], xs2[3]));
        }
    };
    return detail::make_op<T>(std::move(out), {x, W, b}, std::move(bp));
}

template <typename T>
Var<T> upsample_nearest2(const Var<T>& x) {
    const auto& xs = x->value.shape();
    if (xs.size() != 4) throw std::invalid_argument("upsample_nearest2: rank-4 input required");
    int64_t B = xs[0], C = xs[1], H = xs[2], W = xs[3];
    Tensor<T> out({B, C, 2 * H, 2 * W});
    for (int64_t bc = 0; bc < B * C; ++bc) {
        const T* src = x->value.data() + bc * H * W;
        T* dst = out.data() + bc * 4 * H * W;
        for (int64_t h = 0; h < 2 * H; ++h)
            for (int64_t w = 0; w < 2 * W; ++w) dst[h * 2 * W + w] = src[(h / 2) * W + w / 2];
    }
    return detail::make_op<T>(std::move(out), {x}, [B, C, H, W](Node<T>& self) {
        Tensor<T> g({B, C, H, W});
        for (int64_t bc = 0; bc < B * C; ++bc) {
            const T* src = self.grad.data() + bc * 4 * H * W;
            T* dst = g.data() + bc * H * W;
            for (int64_t h = 0; h < 2 * H; ++h)
                for (int64_t w = 0; w < 2 * W; ++w) dst[(h / 2) * W + w / 2] += src[h * 2 * W + w];
        }
        self.parents[0]->accum_grad(g);
    });
}

template <typename T>
Var<T> avg_pool2(const Var<T>& x) {
    const auto& xs = x->value.shape();
    if (xs.size() != 4 || xs[2] % 2 != 0 || xs[3] % 2 != 0)
        throw std::invalid_argument("avg_pool2: rank-4 input with even H,W required");
    int64_t B = xs[0], C = xs[1], H = xs[2] / 2, W = xs[3] / 2;
    Tensor<T> out({B, C, H, W});
    for (int64_t bc = 0; bc < B * C; ++bc) {
        const T* src = x->value.data() + bc * 4 * H * W;
        T* dst = out.data() + bc * H * W;
        for (int64_t h = 0; h < H; ++h)
            for (int64_t w = 0; w < W; ++w)
                dst[h * W + w] = (src[(2 * h) * 2 * W + 2 * w] + src[(2 * h) * 2 * W + 2 * w + 1] +
                                  src[(2 * h + 1) * 2 * W + 2 * w] +
                                  src[(2 * h + 1) * 2 * W + 2 * w + 1]) /
                                 T(4);
    }
    return detail::make_op<T>(std::move(out), {x}, [B, C, H, W](Node<T>& self) {
        Tensor<T> g({B, C, 2 * H, 2 * W});
        for (int64_t bc = 0; bc < B * C; ++bc) {
            const T* src = self.grad.data() + bc * H * W;
            T* dst = g.data() + bc * 4 * H * W;
            for (int64_t h = 0; h < 2 * H; ++h)
                for (int64_t w = 0; w < 2 * W; ++w)
                    dst[h * 2 * W + w] = src[(h / 2) * W + w / 2] / T(4);
        }
        self.parents[0]->accum_grad(g);
    });
}

// ---- rows / reductions ----

template <typename T>
Var<T> softmax_rows(const Var<T>& a) {
    const auto& s = a->value.shape();
    if (s.size() != 2) throw std::invalid_argument("softmax_rows: rank-2 input required");
    int64_t B = s[0], K = s[1];
    Tensor<T> out({B, K});
    for (int64_t r = 0; r < B; ++r) {
        const T* x = a->value.data() + r * K;
        T* y = out.data() + r * K;
        T m = x[0];
        for (int64_t j = 1; j < K; ++j) m = std::max(m, x[j]);
        T z = T(0);
        for (int64_t j = 0; j < K; ++j) {
            y[j] = std::exp(x[j] - m);
            z += y[j];
        }
        for (int64_t j = 0; j < K; ++j) y[j] /= z;
    }
    return detail::make_op<T>(std::move(out), {a}, [B, K](Node<T>& self) {
        Tensor<T> g({B, K});
        for (int64_t r = 0; r < B; ++r) {
            const T* y = self.value.data() + r * K;
            const T* gy = self.grad.data() + r * K;
            T dot = T(0);
            for (int64_t j = 0; j < K; ++j) dot += gy[j] * y[j];
            T* gx = g.data() + r * K;
            for (int64_t j = 0; j < K; ++j) gx[j] = y[j] * (gy[j] - dot);
        }
        self.parents[0]->accum_grad(g);
    });
}

// mean over rows of -log softmax(logits)[label]
template <typename T>
Var<T> softmax_cross_entropy(const Var<T>& logits, const std::vector<int>& labels) {
    const auto& s = logits->value.shape();
    if (s.size() != 2 || static_cast<size_t>(s[0]) != labels.size())
        throw std::invalid_argument("softmax_cross_entropy: shape mismatch");
    int64_t B = s[0], K = s[1];
    Tensor<T> probs({B, K});
    double loss = 0.0;
    for (int64_t r = 0; r < B; ++r) {
        const T* x = logits->value.data() + r * K;
        T* p = probs.data() + r * K;
        T m = x[0];
        for (int64_t j = 1; j < K; ++j) m = std::max(m, x[j]);
        double z = 0.0;
        for (int64_t j = 0; j < K; ++j) z += std::exp(static_cast<double>(x[j] - m));
        double lse = std::log(z) + static_cast<double>(m);
        loss += lse - static_cast<double>(x[labels[static_cast<size_t>(r)]]);
        for (int64_t j = 0; j < K; ++j)
            p[j] = static_cast<T>(std::exp(static_cast<double>(x[j]) - lse));
    }
    Tensor<T> out = Tensor<T>::scalar(static_cast<T>(loss / static_cast<double>(B)));
    auto bp = [probs = std::move(probs), labels, B, K](Node<T>& self) {
        T g0 = self.grad[0];
        Tensor<T> g({B, K});
        for (int64_t r = 0; r < B; ++r) {
            const T* p = probs.data() + r * K;
            T* gx = g.data() + r * K;
            for (int64_t j = 0; j < K; ++j) gx[j] = g0 * p[j] / static_cast<T>(B);
            gx[labels[static_cast<size_t>(r)]] -= g0 / static_cast<T>(B);
        }
        self.parents[0]->accum_grad(g);
    };
    return detail::make_op<T>(std::move(out), {logits}, std::move(bp));
}

// mean |a - b| over every element; subgradient 0 at ties
template <typename T>
Var<T> mean_abs_diff(const Var<T>& a, const Var<T>& b) {
    check_same_shape(a->value, b->value, "mean_abs_diff");
    double s = 0.0;
    for (size_t i = 0; i < a->value.size(); ++i)
        s += std::abs(static_cast<double>(a->value[i] - b->value[i]));
    int64_t n = a->value.numel();
    Tensor<T> out = Tensor<T>::scalar(static_cast<T>(s / static_cast<double>(n)));
    return detail::make_op<T>(std::move(out), {a, b}, [n](Node<T>& self) {
        T g0 = self.grad[0] / static_cast<T>(n);
        const Tensor<T>& av = self.parents[0]->value;
        const Tensor<T>& bv = self.parents[1]->value;
        Tensor<T> g(av.shape());
        for (size_t i = 0; i < g.size(); ++i) {
            T d = av[i] - bv[i];
            g[i] = d > T(0) ? g0 : (d < T(0) ? -g0 : T(0));
        }
        self.parents[0]->accum_grad(g);
        for (size_t i = 0; i < g.size(); ++i) g[i] = -g[i];
        self.parents[1]->accum_grad(g);
    });
}

template <typename T>
Var<T> sum_all(const Var<T>& a) {
    double s = 0.0;
    for (size_t i = 0; i < a->value.size(); ++i) s += static_cast<double>(a->value[i]);
    Tensor<T> out = Tensor<T>::scalar(static_cast<T>(s));
    return detail::make_op<T>(std::move(out), {a}, [](Node<T>& self) {
        Tensor<T> g(self.parents[0]->value.shape());
        g.fill(self.grad[0]);
        self.parents[0]->accum_grad(g);
    });
}

template <typename T>
Var<T> mean_all(const Var<T>& a) {
    int64_t n = a->value.numel();
    return scale(sum_all(a), T(1) / static_cast<T>(n));
}

}  // namespace decgan
