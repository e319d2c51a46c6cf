#pragma once

#include <cstring>
#include <map>
#include <stdexcept>
#include <string>
#include <vector>

#include "decgan/autodiff.hpp"
#include "decgan/random.hpp"
#include "decgan/sha256.hpp"
#include "decgan/tensor.hpp"

namespace decgan {

class FrozenParameterError : public std::logic_error {
public:
    explicit FrozenParameterError(const std::string& name)
        : std::logic_error("attempted update of frozen parameter '" + name + "'") {}
};

// Ordered, named parameter set of one network. Freezing is enforced here:
// assign() on a frozen entry throws, and frozen entries never carry gradients.
template <typename T>
class ParamStore {
public:
    struct Entry {
        std::string name;
        Var<T> var;
        bool frozen = false;
    };

    Var<T> add(const std::string& name, Tensor<T> init) {
        if (index_.count(name)) throw std::invalid_argument("duplicate parameter: " + name);
        index_[name] = entries_.size();
        entries_.push_back({name, make_leaf(std::move(init), true), false});
        return entries_.back().var;
    }

    size_t size() const { return entries_.size(); }
    const Entry& entry(size_t i) const { return entries_.at(i); }
    Entry& entry(size_t i) { return entries_.at(i); }

    bool has(const std::string& name) const { return index_.count(name) != 0; }

    const Entry& entry(const std::string& name) const {
        auto it = index_.find(name);
        if (it == index_.end()) throw std::out_of_range("no parameter named " + name);
        return entries_[it->second];
    }

    Var<T> get(const std::string& name) const { return entry(name).var; }

    void assign(size_t i, Tensor<T> v) {
        Entry& e = entries_.at(i);
        if (e.frozen) throw FrozenParameterError(e.name);
        check_same_shape(e.var->value, v, "ParamStore::assign");
        e.var->value = std::move(v);
    }

    // raw value load for checkpoint restore; refuses frozen entries like assign
    void load_value(const std::string& name, Tensor<T> v) {
        auto it = index_.find(name);
        if (it == index_.end()) throw std::out_of_range("no parameter named " + name);
        assign(it->second, std::move(v));
    }

    void freeze_all() {
        for (Entry& e : entries_) {
            e.frozen = true;
            e.var->requires_grad = false;
            e.var->has_grad = false;
        }
    }

    bool all_frozen() const {
        for (const Entry& e : entries_)
            if (!e.frozen) return false;
        return !entries_.empty();
    }

    void zero_grads() {
        for (Entry& e : entries_) e.var->has_grad = false;
    }

    int64_t total_numel() const {
        int64_t n = 0;
        for (const Entry& e : entries_) n += e.var->value.numel();
        return n;
    }

    // hash of raw parameter bytes in declaration order
    std::string sha256_hex() const {
        Sha256 s;
        for (const Entry& e : entries_)
            s.update(e.var->value.data(), e.var->value.size() * sizeof(T));
        auto d = s.digest();
        static const char* k = "0123456789abcdef";
        std::string out(64, '0');
        for (int i = 0; i < 32; ++i) {
            out[2 * i] = k[d[i] >> 4];
            out[2 * i + 1] = k[d[i] & 0xf];
        }
        return out;
    }

private:
    std::vector<Entry> entries_;
    std::map<std::string, size_t> index_;
};

// ---- layers ----

inline constexpr double kInitStd = 0.02;

template <typename T>
struct Linear {
    int64_t in = 0, out = 0;
    Var<T> W, b;

    Linear() = default;
    Linear(ParamStore<T>& ps, RandomEngine& rng, const std::string& prefix, int64_t in_,
           int64_t out_)
        : in(in_), out(out_) {
        Tensor<T> w({out, in});
        rng.fill_truncated_normal(w.data(), w.size(), kInitStd);
        W = ps.add(prefix + ".weight", std::move(w));
        b = ps.add(prefix + ".bias", Tensor<T>({out}));
    }

    Var<T> operator()(const Var<T>& x) const { return linear(x, W, b); }
};

template <typename T>
struct Conv2d {
    int64_t ic = 0, oc = 0, k = 0, stride = 1, pad = 0;
    Var<T> W, b;

    Conv2d() = default;
    Conv2d(ParamStore<T>& ps, RandomEngine& rng, const std::string& prefix, int64_t ic_,
           int64_t oc_, int64_t k_, int64_t stride_, int64_t pad_)
        : ic(ic_), oc(oc_), k(k_), stride(stride_), pad(pad_) {
        Tensor<T> w({oc, ic, k, k});
        rng.fill_truncated_normal(w.data(), w.size(), kInitStd);
        W = ps.add(prefix + ".weight", std::move(w));
        b = ps.add(prefix + ".bias", Tensor<T>({oc}));
    }

    Var<T> operator()(const Var<T>& x) const { return conv2d(x, W, b, stride, pad); }
};

template <typename T>
struct ConvT2d {
    int64_t ic = 0, oc = 0, k = 0, stride = 1, pad = 0;
    Var<T> W, b;

    ConvT2d() = default;
    ConvT2d(ParamStore<T>& ps, RandomEngine& rng, const std::string& prefix, int64_t ic_,
            int64_t oc_, int64_t k_, int64_t stride_, int64_t pad_)
        : ic(ic_), oc(oc_), k(k_), stride(stride_), pad(pad_) {
        Tensor<T> w({ic, oc, k, k});
        rng.fill_truncated_normal(w.data(), w.size(), kInitStd);
        W = ps.add(prefix + ".weight", std::move(w));
        b = ps.add(prefix + ".bias", Tensor<T>({oc}));
    }

    Var<T> operator()(const Var<T>& x) const { return conv_transpose2d(x, W, b, stride, pad); }
};

// Two 3x3 convs with an identity skip. neg_slope < 0 selects plain ReLU.
template <typename T>
struct ResBlock {
    Conv2d<T> c1, c2;
    T neg_slope = T(0.2);

    ResBlock() = default;
    ResBlock(ParamStore<T>& ps, RandomEngine& rng, const std::string& prefix, int64_t ch,
             T neg_slope_)
        : c1(ps, rng, prefix + ".conv1", ch, ch, 3, 1, 1),
          c2(ps, rng, prefix + ".conv2", ch, ch, 3, 1, 1),
          neg_slope(neg_slope_) {}

    Var<T> operator()(const Var<T>& x) const {
        Var<T> h = neg_slope > T(0) ? leaky_relu(c1(x), neg_slope) : relu(c1(x));
        return add(x, c2(h));
    }
};

// ---- optimizer ----

template <typename T>
struct AdamConfig {
    T lr = T(1e-4);
    T beta1 = T(0.5);
    T beta2 = T(0.999);
    T eps = T(1e-8);
};

template <typename T>
class Adam {
public:
    Adam() = default;
    Adam(const ParamStore<T>& store, AdamConfig<T> cfg) : cfg_(cfg) {
        m_.reserve(store.size());
        v_.reserve(store.size());
        for (size_t i = 0; i < store.size(); ++i) {
            m_.emplace_back(store.entry(i).var->value.shape());
            v_.emplace_back(store.entry(i).var->value.shape());
        }
    }

    void step(ParamStore<T>& store) {
        if (m_.size() != store.size()) throw std::logic_error("Adam: store size changed");
        ++t_;
        const T bc1 = T(1) - std::pow(cfg_.beta1, static_cast<T>(t_));
        const T bc2 = T(1) - std::pow(cfg_.beta2, static_cast<T>(t_));
        for (size_t i = 0; i < store.size(); ++i) {
            auto& e = store.entry(i);
            if (e.frozen || !e.var->has_grad) continue;
            const Tensor<T>& g = e.var->grad;
            Tensor<T> nv = e.var->value;
            T* m = m_[i].data();
            T* v = v_[i].data();
            for (size_t j = 0; j < nv.size(); ++j) {
                m[j] = cfg_.beta1 * m[j] + (T(1) - cfg_.beta1) * g[j];
                v[j] = cfg_.beta2 * v[j] + (T(1) - cfg_.beta2) * g[j] * g[j];
                T mhat = m[j] / bc1;
                T vhat = v[j] / bc2;
                nv[j] -= cfg_.lr * mhat / (std::sqrt(vhat) + cfg_.eps);
            }
            store.assign(i, std::move(nv));
        }
    }

    int64_t step_count() const { return t_; }
    const std::vector<Tensor<T>>& first_moments() const { return m_; }
    const std::vector<Tensor<T>>& second_moments() const { return v_; }
    const AdamConfig<T>& config() const { return cfg_; }

    void restore_state(int64_t t, std::vector<Tensor<T>> m, std::vector<Tensor<T>> v) {
        if (m.size() != m_.size() || v.size() != v_.size())
            throw std::invalid_argument("Adam::restore_state: size mismatch");
        t_ = t;
        m_ = std::move(m);
        v_ = std::move(v);
    }

private:
    AdamConfig<T> cfg_;
    std::vector<Tensor<T>> m_, v_;
    int64_t t_ = 0;
};

}  // namespace decgan
