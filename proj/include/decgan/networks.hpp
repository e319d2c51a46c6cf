#pragma once

#include <string>
#include <vector>

#include "decgan/nn.hpp"

namespace decgan {

inline constexpr double kLogVarMin = -10.0;
inline constexpr double kLogVarMax = 10.0;
inline constexpr double kLeakySlope = 0.2;

struct BackboneConfig {
    std::string backbone = "vaegan";  // vaegan | resgan
    int64_t resolution = 32;
    int64_t channels = 1;
    int64_t latent_dim = 64;
    int64_t base_width = 32;
    int64_t num_attribute_classes = 10;

    void validate() const {
        if (backbone != "vaegan" && backbone != "resgan")
            throw std::invalid_argument("BackboneConfig: unknown backbone '" + backbone + "'");
        if (latent_dim < 2) throw std::invalid_argument("BackboneConfig: latent_dim must be >= 2");
        if (resolution < 8 || resolution % 8 != 0)
            throw std::invalid_argument("BackboneConfig: resolution must be a multiple of 8");
        if (num_attribute_classes < 2)
            throw std::invalid_argument("BackboneConfig: num_attribute_classes must be >= 2");
        if (channels < 1 || base_width < 1)
            throw std::invalid_argument("BackboneConfig: channels/base_width must be positive");
        if (backbone == "resgan" && resolution < 16)
            throw std::invalid_argument(
                "BackboneConfig: resgan discriminator stride plan needs resolution >= 16");
    }

    bool is_resgan() const { return backbone == "resgan"; }
    int64_t bottom() const { return resolution / 8; }  // spatial size after 3 stride-2 convs
    int64_t trunk_width() const { return 4 * base_width; }
    int64_t flat_dim() const { return trunk_width() * bottom() * bottom(); }
};

template <typename T>
struct GaussianPosterior {
    Tensor<T> mean;          // B x latent_dim
    Tensor<T> log_variance;  // B x latent_dim, clamped to [kLogVarMin, kLogVarMax]
};

template <typename T>
struct PosteriorVars {
    Var<T> mean;
    Var<T> logvar;
};

template <typename T>
struct EncodeGraph {
    Var<T> mean;
    Var<T> logvar;
    Var<T> code;  // final_fc(mean + exp(0.5 logvar) * eps)
};

// z_c, z_a and their sum; the additive contract is enforced by construction.
template <typename T>
struct LatentTriple {
    Tensor<T> z_c;
    Tensor<T> z_a;
    Tensor<T> z;

    LatentTriple(Tensor<T> zc, Tensor<T> za) : z_c(std::move(zc)), z_a(std::move(za)) {
        check_same_shape(z_c, z_a, "LatentTriple");
        z = z_c;
        for (size_t i = 0; i < z.size(); ++i) z[i] += z_a[i];
    }
};

// ---- content / attribute encoder ----

template <typename T>
struct EncoderNet {
    BackboneConfig cfg;
    ParamStore<T> params;
    std::vector<Conv2d<T>> convs;
    std::vector<ResBlock<T>> blocks;  // resgan only
    Linear<T> fc_mean, fc_logvar;     // posterior heads
    Linear<T> final_fc;               // E^fc, latent -> latent

    static EncoderNet build(const BackboneConfig& cfg, uint64_t seed) {
        cfg.validate();
        EncoderNet net;
        net.cfg = cfg;
        RandomEngine rng(seed);
        int64_t bw = cfg.base_width;
        net.convs.emplace_back(net.params, rng, "conv1", cfg.channels, bw, 5, 2, 2);
        net.convs.emplace_back(net.params, rng, "conv2", bw, 2 * bw, 5, 2, 2);
        net.convs.emplace_back(net.params, rng, "conv3", 2 * bw, 4 * bw, 5, 2, 2);
        if (cfg.is_resgan())
            for (int i = 0; i < 4; ++i)
                net.blocks.emplace_back(net.params, rng, "block" + std::to_string(i + 1),
                                        4 * bw, T(kLeakySlope));
        net.fc_mean = Linear<T>(net.params, rng, "fc_mean", cfg.flat_dim(), cfg.latent_dim);
        net.fc_logvar = Linear<T>(net.params, rng, "fc_logvar", cfg.flat_dim(), cfg.latent_dim);
        net.final_fc = Linear<T>(net.params, rng, "final_fc", cfg.latent_dim, cfg.latent_dim);
        return net;
    }

    Var<T> trunk(const Var<T>& x) const {
        const auto& s = x->value.shape();
        if (s.size() != 4 || s[1] != cfg.channels || s[2] != cfg.resolution ||
            s[3] != cfg.resolution)
            throw std::invalid_argument("EncoderNet: input shape mismatch");
        Var<T> h = x;
        for (const auto& c : convs) h = leaky_relu(c(h), T(kLeakySlope));
        for (const auto& b : blocks) h = b(h);
        return reshape(h, {s[0], cfg.flat_dim()});
    }

    PosteriorVars<T> posterior(const Var<T>& x) const {
        Var<T> h = trunk(x);
        return {fc_mean(h), clamp_op(fc_logvar(h), T(kLogVarMin), T(kLogVarMax))};
    }

    Var<T> apply_final_fc(const Var<T>& z) const { return final_fc(z); }

    // z' = mean + exp(0.5 logvar) * eps, code = final_fc(z')
    EncodeGraph<T> encode_graph(const Var<T>& x, const Tensor<T>& eps) const {
        PosteriorVars<T> p = posterior(x);
        check_same_shape(p.mean->value, eps, "encode: eps");
        Var<T> sigma = exp_op(scale(p.logvar, T(0.5)));
        Var<T> zprime = add(p.mean, mul(sigma, make_const(eps)));
        return {p.mean, p.logvar, final_fc(zprime)};
    }
};

// reparameterization noise for a B x latent_dim encode
template <typename T>
Tensor<T> encode_noise(const BackboneConfig& cfg, int64_t batch, uint64_t seed) {
    RandomEngine rng(seed);
    return Tensor<T>::randn({batch, cfg.latent_dim}, rng);
}

template <typename T>
struct EncodeResult {
    GaussianPosterior<T> posterior;
    Tensor<T> code;
};

template <typename T>
EncodeResult<T> encode(const EncoderNet<T>& enc, const Tensor<T>& images, uint64_t rng_seed) {
    Tensor<T> eps = encode_noise<T>(enc.cfg, images.dim(0), rng_seed);
    EncodeGraph<T> g = enc.encode_graph(make_const(images), eps);
    return {{g.mean->value, g.logvar->value}, g.code->value};
}

// z~ ~ N(0,1) passed through the encoder's final FC layer
template <typename T>
Tensor<T> sample_code(const EncoderNet<T>& enc, int64_t batch, uint64_t rng_seed) {
    RandomEngine rng(rng_seed);
    Tensor<T> ztilde = Tensor<T>::randn({batch, enc.cfg.latent_dim}, rng);
    return enc.apply_final_fc(make_const(ztilde))->value;
}

// ---- generator ----

template <typename T>
struct GeneratorNet {
    BackboneConfig cfg;
    ParamStore<T> params;
    Linear<T> fc;
    std::vector<ResBlock<T>> blocks;   // resgan only
    std::vector<Conv2d<T>> convs;      // vaegan: 4 convs, 3 nearest upsamples
    std::vector<ConvT2d<T>> deconvs;   // resgan: 3 fractional layers

    static GeneratorNet build(const BackboneConfig& cfg, uint64_t seed) {
        cfg.validate();
        GeneratorNet net;
        net.cfg = cfg;
        RandomEngine rng(seed);
        int64_t bw = cfg.base_width;
        net.fc = Linear<T>(net.params, rng, "fc", cfg.latent_dim, cfg.flat_dim());
        if (cfg.is_resgan()) {
            for (int i = 0; i < 4; ++i)
                net.blocks.emplace_back(net.params, rng, "block" + std::to_string(i + 1),
                                        4 * bw, T(-1) /* ReLU */);
            net.deconvs.emplace_back(net.params, rng, "deconv1", 4 * bw, 2 * bw, 4, 2, 1);
            net.deconvs.emplace_back(net.params, rng, "deconv2", 2 * bw, bw, 4, 2, 1);
            net.deconvs.emplace_back(net.params, rng, "deconv3", bw, cfg.channels, 4, 2, 1);
        } else {
            net.convs.emplace_back(net.params, rng, "conv1", 4 * bw, 2 * bw, 3, 1, 1);
            net.convs.emplace_back(net.params, rng, "conv2", 2 * bw, bw, 3, 1, 1);
            net.convs.emplace_back(net.params, rng, "conv3", bw, bw, 3, 1, 1);
            net.convs.emplace_back(net.params, rng, "conv4", bw, cfg.channels, 3, 1, 1);
        }
        return net;
    }

    Var<T> forward(const Var<T>& z) const {
        const auto& s = z->value.shape();
        if (s.size() != 2 || s[1] != cfg.latent_dim)
            throw std::invalid_argument("GeneratorNet: latent shape mismatch");
        int64_t B = s[0], bot = cfg.bottom();
        Var<T> h = relu(reshape(fc(z), {B, cfg.trunk_width(), bot, bot}));
        if (cfg.is_resgan()) {
            for (const auto& b : blocks) h = b(h);
            for (size_t i = 0; i < deconvs.size(); ++i) {
                h = deconvs[i](h);
                if (i + 1 < deconvs.size()) h = relu(h);
            }
        } else {
            for (size_t i = 0; i < convs.size(); ++i) {
                if (i < 3) h = upsample_nearest2(h);
                h = convs[i](h);
                if (i + 1 < convs.size()) h = relu(h);
            }
        }
        return tanh_op(h);
    }
};

// G(z_c, z_a) := G(z_c + z_a); elementwise sum is the only composition rule.
template <typename T>
Var<T> generate_graph(const GeneratorNet<T>& G, const Var<T>& z_c, const Var<T>& z_a) {
    return G.forward(add(z_c, z_a));
}

template <typename T>
Tensor<T> generate(const GeneratorNet<T>& G, const Tensor<T>& z_c, const Tensor<T>& z_a) {
    return generate_graph(G, make_const(z_c), make_const(z_a))->value;
}

// ---- discriminator (pretraining only) ----

template <typename T>
struct DiscriminatorNet {
    BackboneConfig cfg;
    ParamStore<T> params;
    // vaegan: BEGAN-style autoencoder
    std::vector<Conv2d<T>> enc_convs;
    Linear<T> enc_fc, dec_fc;
    std::vector<Conv2d<T>> dec_convs;
    // resgan: one 5-conv trunk applied at two image scales
    std::vector<Conv2d<T>> trunk_convs;

    static DiscriminatorNet build(const BackboneConfig& cfg, uint64_t seed) {
        cfg.validate();
        DiscriminatorNet net;
        net.cfg = cfg;
        RandomEngine rng(seed);
        int64_t bw = cfg.base_width;
        if (cfg.is_resgan()) {
            net.trunk_convs.emplace_back(net.params, rng, "conv1", cfg.channels, bw, 4, 2, 1);
            net.trunk_convs.emplace_back(net.params, rng, "conv2", bw, 2 * bw, 4, 2, 1);
            net.trunk_convs.emplace_back(net.params, rng, "conv3", 2 * bw, 4 * bw, 4, 2, 1);
            net.trunk_convs.emplace_back(net.params, rng, "conv4", 4 * bw, 4 * bw, 4, 2, 1);
            net.trunk_convs.emplace_back(net.params, rng, "conv5", 4 * bw, 1, 3, 1, 1);
        } else {
            net.enc_convs.emplace_back(net.params, rng, "enc_conv1", cfg.channels, bw, 5, 2, 2);
            net.enc_convs.emplace_back(net.params, rng, "enc_conv2", bw, 2 * bw, 5, 2, 2);
            net.enc_convs.emplace_back(net.params, rng, "enc_conv3", 2 * bw, 4 * bw, 5, 2, 2);
            net.enc_fc = Linear<T>(net.params, rng, "enc_fc", cfg.flat_dim(), cfg.latent_dim);
            net.dec_fc = Linear<T>(net.params, rng, "dec_fc", cfg.latent_dim, cfg.flat_dim());
            net.dec_convs.emplace_back(net.params, rng, "dec_conv1", 4 * bw, 2 * bw, 3, 1, 1);
            net.dec_convs.emplace_back(net.params, rng, "dec_conv2", 2 * bw, bw, 3, 1, 1);
            net.dec_convs.emplace_back(net.params, rng, "dec_conv3", bw, bw, 3, 1, 1);
            net.dec_convs.emplace_back(net.params, rng, "dec_conv4", bw, cfg.channels, 3, 1, 1);
        }
        return net;
    }

    // vaegan: image -> image; reconstruction error is the BEGAN energy
    Var<T> reconstruct(const Var<T>& x) const {
        if (cfg.is_resgan())
            throw std::logic_error("DiscriminatorNet::reconstruct is vaegan-only");
        const auto& s = x->value.shape();
        Var<T> h = x;
        for (const auto& c : enc_convs) h = leaky_relu(c(h), T(kLeakySlope));
        h = enc_fc(reshape(h, {s[0], cfg.flat_dim()}));
        h = leaky_relu(dec_fc(h), T(kLeakySlope));
        h = reshape(h, {s[0], cfg.trunk_width(), cfg.bottom(), cfg.bottom()});
        for (size_t i = 0; i < dec_convs.size(); ++i) {
            if (i < 3) h = upsample_nearest2(h);
            h = dec_convs[i](h);
            if (i + 1 < dec_convs.size()) h = leaky_relu(h, T(kLeakySlope));
        }
        return tanh_op(h);
    }

    // resgan: multiscale score maps (full and half resolution)
    std::vector<Var<T>> scores(const Var<T>& x) const {
        if (!cfg.is_resgan()) throw std::logic_error("DiscriminatorNet::scores is resgan-only");
        std::vector<Var<T>> out;
        for (Var<T> in : {x, avg_pool2(x)}) {
            Var<T> h = in;
            for (size_t i = 0; i < trunk_convs.size(); ++i) {
                h = trunk_convs[i](h);
                if (i + 1 < trunk_convs.size()) h = leaky_relu(h, T(kLeakySlope));
            }
            out.push_back(h);
        }
        return out;
    }

    int64_t trunk_conv_count() const {
        return static_cast<int64_t>(cfg.is_resgan() ? trunk_convs.size()
                                                    : enc_convs.size() + dec_convs.size());
    }
};

// BEGAN energy e(x) = mean |D(x) - x|
template <typename T>
Var<T> began_energy(const DiscriminatorNet<T>& D, const Var<T>& x) {
    return mean_abs_diff(D.reconstruct(x), x);
}

// ---- attribute classifier ----

template <typename T>
struct ClassifierNet {
    BackboneConfig cfg;
    ParamStore<T> params;
    std::vector<Conv2d<T>> convs;
    Linear<T> fc1, fc2;

    static ClassifierNet build(const BackboneConfig& cfg, uint64_t seed) {
        cfg.validate();
        ClassifierNet net;
        net.cfg = cfg;
        RandomEngine rng(seed);
        int64_t bw = cfg.base_width;
        net.convs.emplace_back(net.params, rng, "conv1", cfg.channels, bw, 5, 2, 2);
        net.convs.emplace_back(net.params, rng, "conv2", bw, 2 * bw, 5, 2, 2);
        net.convs.emplace_back(net.params, rng, "conv3", 2 * bw, 4 * bw, 5, 2, 2);
        net.fc1 = Linear<T>(net.params, rng, "fc1", cfg.flat_dim(), net.penultimate_dim(cfg));
        net.fc2 = Linear<T>(net.params, rng, "fc2", net.penultimate_dim(cfg),
                            cfg.num_attribute_classes);
        return net;
    }

    static int64_t penultimate_dim(const BackboneConfig& cfg) { return 4 * cfg.base_width; }
    int64_t penultimate_dim() const { return penultimate_dim(cfg); }

    struct Out {
        Var<T> logits;
        Var<T> probs;
        Var<T> features;  // penultimate (pre-logits) activations
    };

    Out forward(const Var<T>& x) const {
        const auto& s = x->value.shape();
        if (s.size() != 4 || s[1] != cfg.channels || s[2] != cfg.resolution ||
            s[3] != cfg.resolution)
            throw std::invalid_argument("ClassifierNet: input shape mismatch");
        Var<T> h = x;
        for (const auto& c : convs) h = leaky_relu(c(h), T(kLeakySlope));
        Var<T> feat = relu(fc1(reshape(h, {s[0], cfg.flat_dim()})));
        Var<T> logits = fc2(feat);
        return {logits, softmax_rows(logits), feat};
    }
};

template <typename T>
struct Classification {
    Tensor<T> probabilities;  // B x K
    Tensor<T> features;       // B x penultimate_dim
    std::vector<int> labels;  // argmax per row
};

template <typename T>
Classification<T> classify(const ClassifierNet<T>& C, const Tensor<T>& images) {
    auto out = C.forward(make_const(images));
    const Tensor<T>& p = out.probs->value;
    int64_t B = p.dim(0), K = p.dim(1);
    std::vector<int> labels(static_cast<size_t>(B));
    for (int64_t r = 0; r < B; ++r) {
        int best = 0;
        for (int64_t j = 1; j < K; ++j)
            if (p.at(r, j) > p.at(r, best)) best = static_cast<int>(j);
        labels[static_cast<size_t>(r)] = best;
    }
    return {p, out.features->value, std::move(labels)};
}

}  // namespace decgan
