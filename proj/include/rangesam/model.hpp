#pragma once
#include <array>
#include <stdexcept>
#include <string>
#include <vector>

#include "rangesam/ops.hpp"
#include "rangesam/optim.hpp"

// The segmentation network: stem, four windowed/global attention stages,
// receptive-field-block decoder with per-scale auxiliary heads.
namespace rangesam::model {

using ad::Shape;
using ad::Tensor;
using optim::Parameter;
using optim::ParamGroup;

struct ModelConfig {
    int in_channels = 6;
    int stem_channels = 96;
    std::vector<int> stage_blocks = {1, 2, 7, 2};
    std::vector<int> stage_channels = {96, 192, 384, 768};
    std::vector<std::pair<int, int>> window_sizes = {{8, 64}, {16, 128}, {16, 128}, {8, 64}};
    std::vector<int> global_blocks = {5, 7, 9, 11};  // 0-based over the full block sequence
    std::vector<int> heads = {1, 2, 4, 8};
    int mlp_ratio = 4;
    int decoder_channels = 256;
    int num_classes = 19;
    double drop_path_max = 0.1;
    std::pair<int, int> pos_table_shape = {4, 128};
    std::pair<int, int> input_hw = {64, 2048};
    bool pos_enabled = true;

    int total_blocks() const {
        int n = 0;
        for (int b : stage_blocks) n += b;
        return n;
    }

    bool is_global_block(int index) const {
        for (int g : global_blocks)
            if (g == index) return true;
        return false;
    }

    void validate() const {
        if (stage_blocks.size() != 4 || stage_channels.size() != 4 || window_sizes.size() != 4 ||
            heads.size() != 4)
            throw std::invalid_argument("model config: expected 4 stages");
        if (stem_channels != stage_channels[0])
            throw std::invalid_argument("model config: stem channels must match stage 1 channels");
        for (int s = 0; s < 3; ++s)
            if (stage_channels[static_cast<std::size_t>(s + 1)] != 2 * stage_channels[static_cast<std::size_t>(s)])
                throw std::invalid_argument("model config: stage channels must double");
        for (int s = 0; s < 4; ++s)
            if (stage_channels[static_cast<std::size_t>(s)] % heads[static_cast<std::size_t>(s)] != 0)
                throw std::invalid_argument("model config: heads must divide stage channels");
        for (int g : global_blocks)
            if (g < 0 || g >= total_blocks())
                throw std::invalid_argument("model config: global block index out of range");
        if (decoder_channels % 4 != 0)
            throw std::invalid_argument("model config: decoder channels must be divisible by 4");
        if (mlp_ratio < 1) throw std::invalid_argument("model config: mlp_ratio must be >= 1");
    }

    // desk-scale preset preserving the full structure
    static ModelConfig toy() {
        ModelConfig c;
        c.stem_channels = 16;
        c.stage_blocks = {1, 1, 2, 1};
        c.stage_channels = {16, 32, 64, 128};
        c.window_sizes = {{4, 16}, {8, 32}, {8, 32}, {4, 16}};
        c.global_blocks = {2, 4};
        c.heads = {1, 2, 4, 8};
        c.decoder_channels = 64;
        c.input_hw = {16, 256};
        return c;
    }
};

template <typename T>
struct MultiScaleFeatures {
    std::array<Tensor<T>, 4> f;
};

template <typename T>
struct SegOutput {
    Tensor<T> main;                   // [B, num_classes, H, W]
    std::array<Tensor<T>, 4> aux;     // per-scale logits at native resolution
};

namespace detail {

// truncated normal, std 0.02, resampled beyond 2 sigma
template <typename T>
Tensor<T> trunc_normal(Shape shape, Rng& rng, double stddev = 0.02) {
    Tensor<T> t = Tensor<T>::zeros(std::move(shape), true);
    for (std::int64_t i = 0; i < t.numel(); ++i) {
        double v = rng.normal();
        while (std::abs(v) > 2.0) v = rng.normal();
        t.data()[i] = static_cast<T>(v * stddev);
    }
    return t;
}

} // namespace detail

template <typename T>
class RangeSamModel;

// collects parameters during construction
template <typename T>
class ParamBuilder {
public:
    ParamBuilder(std::vector<Parameter<T>>& out, Rng& rng) : out_(out), rng_(rng) {}

    Tensor<T> weight(Shape shape, const std::string& name, ParamGroup g) {
        Tensor<T> t = detail::trunc_normal<T>(std::move(shape), rng_);
        out_.push_back({t, name, g});
        return t;
    }
    Tensor<T> zeros(Shape shape, const std::string& name, ParamGroup g) {
        Tensor<T> t = Tensor<T>::zeros(std::move(shape), true);
        out_.push_back({t, name, g});
        return t;
    }
    Tensor<T> ones(Shape shape, const std::string& name, ParamGroup g) {
        Tensor<T> t = Tensor<T>::filled(std::move(shape), T(1), true);
        out_.push_back({t, name, g});
        return t;
    }

private:
    std::vector<Parameter<T>>& out_;
    Rng& rng_;
};

template <typename T>
struct LayerNormParams {
    Tensor<T> gamma, beta;
    static LayerNormParams make(ParamBuilder<T>& pb, int c, const std::string& name, ParamGroup g) {
        return {pb.ones({c}, name + ".gamma", g), pb.zeros({c}, name + ".beta", g)};
    }
};

template <typename T>
struct ConvParams {
    Tensor<T> w, b;
    static ConvParams make(ParamBuilder<T>& pb, int cout, int cing, int kh, int kw,
                           const std::string& name, ParamGroup g) {
        return {pb.weight({cout, cing, kh, kw}, name + ".w", g), pb.zeros({cout}, name + ".b", g)};
    }
};

template <typename T>
struct LinearParams {
    Tensor<T> w, b;
    static LinearParams make(ParamBuilder<T>& pb, int cin, int cout, const std::string& name,
                             ParamGroup g) {
        return {pb.weight({cin, cout}, name + ".w", g), pb.zeros({cout}, name + ".b", g)};
    }
};

template <typename T>
struct BlockParams {
    LayerNormParams<T> ln1;
    LinearParams<T> wq, wk, wv, wo;
    LayerNormParams<T> ln2;
    ConvParams<T> mlp_in;    // 1x1, C -> ratio*C
    ConvParams<T> mlp_dw;    // 3x3 depthwise on ratio*C
    ConvParams<T> mlp_out;   // 1x1, ratio*C -> C
};

template <typename T>
struct RfbParams {
    ConvParams<T> br0;                      // 1x1
    ConvParams<T> br1_pre, br1_conv;        // 1x1 then 3x3 d1
    ConvParams<T> br2_pre, br2_conv;        // 1x1 then 3x3 d3
    ConvParams<T> br3_pre, br3_conv;        // 1x1 then 3x3 d5
    LayerNormParams<T> ln0, ln1a, ln1b, ln2a, ln2b, ln3a, ln3b;
    ConvParams<T> fuse;                     // 1x1, 4*bc -> dc
    ConvParams<T> shortcut;                 // 1x1, C -> dc
};

// positional table applied as a coarse grid bilinearly upsampled to the
// feature resolution and added with a learned per-channel scale:
// y[b,c,p] = x[b,c,p] + scale[c] * up(table)[p]
template <typename T>
Tensor<T> add_pos_embed(const Tensor<T>& x, const Tensor<T>& table, const Tensor<T>& scale) {
    using namespace rangesam::ops;
    if (table.ndim() != 2) throw std::invalid_argument("add_pos_embed: table must be 2-d");
    const int b = x.dim(0), c = x.dim(1), h = x.dim(2), w = x.dim(3);
    if (scale.numel() != c) throw std::invalid_argument("add_pos_embed: scale length mismatch");
    Tensor<T> grid = reshape(table, {1, 1, table.dim(0), table.dim(1)});
    Tensor<T> up = upsample_bilinear(grid, h, w);  // [1,1,H,W]

    Tensor<T> y = Tensor<T>::zeros(x.shape());
    const std::int64_t hw = static_cast<std::int64_t>(h) * w;
    for (int n = 0; n < b; ++n)
        for (int ch = 0; ch < c; ++ch) {
            T* yp = y.data() + (static_cast<std::int64_t>(n) * c + ch) * hw;
            const T* xp = x.data() + (static_cast<std::int64_t>(n) * c + ch) * hw;
            std::copy(xp, xp + hw, yp);
            kernels::axpy(scale.data()[ch], up.data(), yp, static_cast<std::size_t>(hw));
        }
    auto xn = x.node();
    auto un = up.node();
    auto sn = scale.node();
    ad::attach<T>(y, {x, up, scale}, [xn, un, sn, b, c, hw](ad::Node<T>& yn) {
        if (xn->requires_grad)
            kernels::axpy(T(1), yn.grad.data(), xn->grad_ptr(), yn.data.size());
        if (un->requires_grad) {
            T* gu = un->grad_ptr();
            for (int n = 0; n < b; ++n)
                for (int ch = 0; ch < c; ++ch)
                    kernels::axpy(sn->data[static_cast<std::size_t>(ch)],
                                  yn.grad.data() + (static_cast<std::int64_t>(n) * c + ch) * hw, gu,
                                  static_cast<std::size_t>(hw));
        }
        if (sn->requires_grad) {
            T* gs = sn->grad_ptr();
            for (int n = 0; n < b; ++n)
                for (int ch = 0; ch < c; ++ch)
                    gs[ch] += kernels::dot(
                        yn.grad.data() + (static_cast<std::int64_t>(n) * c + ch) * hw,
                        un->data.data(), static_cast<std::size_t>(hw));
        }
    });
    return y;
}

template <typename T>
class RangeSamModel {
public:
    RangeSamModel(const ModelConfig& cfg, Rng& rng) : cfg_(cfg) {
        cfg_.validate();
        ParamBuilder<T> pb(params_, rng);
        const auto bb = ParamGroup::Backbone;
        const auto hd = ParamGroup::Head;
        const int sc = cfg_.stem_channels;

        stem_proj_ = ConvParams<T>::make(pb, sc, cfg_.in_channels, 1, 1, "stem.proj", bb);
        stem_ln_ = LayerNormParams<T>::make(pb, sc, "stem.ln", bb);
        stem_conv_ = ConvParams<T>::make(pb, sc, sc, 7, 7, "stem.patch", bb);
        pos_table_ = pb.weight({cfg_.pos_table_shape.first, cfg_.pos_table_shape.second},
                               "stem.pos.table", bb);
        pos_scale_ = pb.ones({sc}, "stem.pos.scale", bb);

        int block_index = 0;
        for (int s = 0; s < 4; ++s) {
            const int c = cfg_.stage_channels[static_cast<std::size_t>(s)];
            const int hidden = cfg_.mlp_ratio * c;
            for (int k = 0; k < cfg_.stage_blocks[static_cast<std::size_t>(s)]; ++k) {
                const std::string base =
                    "encoder.stage" + std::to_string(s + 1) + ".block" + std::to_string(k);
                BlockParams<T> bp;
                bp.ln1 = LayerNormParams<T>::make(pb, c, base + ".ln1", bb);
                bp.wq = LinearParams<T>::make(pb, c, c, base + ".attn.q", bb);
                bp.wk = LinearParams<T>::make(pb, c, c, base + ".attn.k", bb);
                bp.wv = LinearParams<T>::make(pb, c, c, base + ".attn.v", bb);
                bp.wo = LinearParams<T>::make(pb, c, c, base + ".attn.o", bb);
                bp.ln2 = LayerNormParams<T>::make(pb, c, base + ".ln2", bb);
                bp.mlp_in = ConvParams<T>::make(pb, hidden, c, 1, 1, base + ".mlp.in", bb);
                bp.mlp_dw = ConvParams<T>::make(pb, hidden, 1, 3, 3, base + ".mlp.dw", bb);
                bp.mlp_out = ConvParams<T>::make(pb, c, hidden, 1, 1, base + ".mlp.out", bb);
                blocks_.push_back(std::move(bp));
                ++block_index;
            }
            if (s < 3) {
                transitions_.push_back(ConvParams<T>::make(
                    pb, 2 * c, c, 1, 1, "encoder.transition" + std::to_string(s + 1), bb));
            }
        }
        (void)block_index;

        const int dc = cfg_.decoder_channels;
        const int bc = dc / 4;
        for (int s = 0; s < 4; ++s) {
            const int c = cfg_.stage_channels[static_cast<std::size_t>(s)];
            const std::string base = "decoder.rfb" + std::to_string(s + 1);
            RfbParams<T> rp;
            rp.br0 = ConvParams<T>::make(pb, bc, c, 1, 1, base + ".br0", hd);
            rp.ln0 = LayerNormParams<T>::make(pb, bc, base + ".br0.ln", hd);
            rp.br1_pre = ConvParams<T>::make(pb, bc, c, 1, 1, base + ".br1.pre", hd);
            rp.ln1a = LayerNormParams<T>::make(pb, bc, base + ".br1.pre.ln", hd);
            rp.br1_conv = ConvParams<T>::make(pb, bc, bc, 3, 3, base + ".br1.conv", hd);
            rp.ln1b = LayerNormParams<T>::make(pb, bc, base + ".br1.conv.ln", hd);
            rp.br2_pre = ConvParams<T>::make(pb, bc, c, 1, 1, base + ".br2.pre", hd);
            rp.ln2a = LayerNormParams<T>::make(pb, bc, base + ".br2.pre.ln", hd);
            rp.br2_conv = ConvParams<T>::make(pb, bc, bc, 3, 3, base + ".br2.conv", hd);
            rp.ln2b = LayerNormParams<T>::make(pb, bc, base + ".br2.conv.ln", hd);
            rp.br3_pre = ConvParams<T>::make(pb, bc, c, 1, 1, base + ".br3.pre", hd);
            rp.ln3a = LayerNormParams<T>::make(pb, bc, base + ".br3.pre.ln", hd);
            rp.br3_conv = ConvParams<T>::make(pb, bc, bc, 3, 3, base + ".br3.conv", hd);
            rp.ln3b = LayerNormParams<T>::make(pb, bc, base + ".br3.conv.ln", hd);
            rp.fuse = ConvParams<T>::make(pb, dc, 4 * bc, 1, 1, base + ".fuse", hd);
            rp.shortcut = ConvParams<T>::make(pb, dc, c, 1, 1, base + ".shortcut", hd);
            rfbs_.push_back(std::move(rp));
            aux_heads_.push_back(ConvParams<T>::make(pb, cfg_.num_classes, dc, 1, 1,
                                                     "decoder.aux" + std::to_string(s + 1), hd));
        }
        reduce_ = ConvParams<T>::make(pb, dc, 4 * dc, 3, 3, "decoder.reduce", hd);
        reduce_ln_ = LayerNormParams<T>::make(pb, dc, "decoder.reduce.ln", hd);
        classifier_ = ConvParams<T>::make(pb, cfg_.num_classes, dc, 1, 1, "decoder.classifier", hd);
    }

    const ModelConfig& config() const { return cfg_; }
    std::vector<Parameter<T>>& parameters() { return params_; }
    const std::vector<Parameter<T>>& parameters() const { return params_; }

    std::int64_t count_parameters(ParamGroup g) const {
        std::int64_t n = 0;
        for (const auto& p : params_)
            if (p.group == g) n += p.tensor.numel();
        return n;
    }
    std::int64_t count_parameters() const {
        return count_parameters(ParamGroup::Backbone) + count_parameters(ParamGroup::Head);
    }

    Tensor<T> stem_forward(const Tensor<T>& x) const {
        using namespace rangesam::ops;
        if (x.dim(1) != cfg_.in_channels)
            throw std::invalid_argument("stem: input channel mismatch");
        Tensor<T> y = conv2d(x, stem_proj_.w, stem_proj_.b);           // 1x1 projection
        y = layer_norm(y, stem_ln_.gamma, stem_ln_.beta, 1);
        y = gelu(y);
        y = conv2d(y, stem_conv_.w, stem_conv_.b, 1, 3);               // overlapping 7x7 patches
        if (cfg_.pos_enabled) y = add_pos_embed(y, pos_table_, pos_scale_);
        return y;
    }

    // one pre-norm transformer block on an NCHW feature map
    Tensor<T> hiera_block(const Tensor<T>& x, int stage, int block_index, bool training,
                          Rng& rng) const {
        using namespace rangesam::ops;
        const BlockParams<T>& bp = blocks_[static_cast<std::size_t>(block_index)];
        const bool global = cfg_.is_global_block(block_index);
        const double rate = drop_path_rate(block_index);
        const int b = x.dim(0), c = x.dim(1), h = x.dim(2), w = x.dim(3);
        const int n_heads = cfg_.heads[static_cast<std::size_t>(stage)];

        // attention sublayer
        Tensor<T> t = layer_norm(x, bp.ln1.gamma, bp.ln1.beta, 1);
        Tensor<T> attn_out;
        if (global) {
            Tensor<T> tokens = reshape(permute(t, {0, 2, 3, 1}), {b, h * w, c});
            tokens = masked_mha(tokens, bp.wq.w, bp.wq.b, bp.wk.w, bp.wk.b, bp.wv.w, bp.wv.b,
                                bp.wo.w, bp.wo.b, n_heads, Tensor<T>{});
            attn_out = permute(reshape(tokens, {b, h, w, c}), {0, 3, 1, 2});
        } else {
            const auto [wh, ww] = cfg_.window_sizes[static_cast<std::size_t>(stage)];
            ops::PadRecord rec;
            Tensor<T> tokens = window_partition(t, wh, ww, rec);
            tokens = masked_mha(tokens, bp.wq.w, bp.wq.b, bp.wk.w, bp.wk.b, bp.wv.w, bp.wv.b,
                                bp.wo.w, bp.wo.b, n_heads, Tensor<T>{});
            attn_out = window_unpartition(tokens, rec);
        }
        Tensor<T> y = add(x, drop_path(attn_out, rate, training, rng));

        // MLP sublayer with a depthwise 3x3 on the spatial grid
        Tensor<T> z = layer_norm(y, bp.ln2.gamma, bp.ln2.beta, 1);
        z = conv2d(z, bp.mlp_in.w, bp.mlp_in.b);
        z = gelu(z);
        z = conv2d(z, bp.mlp_dw.w, bp.mlp_dw.b, 1, 1, cfg_.mlp_ratio * c);  // depthwise
        z = gelu(z);
        z = conv2d(z, bp.mlp_out.w, bp.mlp_out.b);
        return add(y, drop_path(z, rate, training, rng));
    }

    Tensor<T> stage_transition(const Tensor<T>& x, int after_stage) const {
        using namespace rangesam::ops;
        const ConvParams<T>& tp = transitions_[static_cast<std::size_t>(after_stage)];
        return conv2d(pool2d_mean(x, 2, 2), tp.w, tp.b);
    }

    MultiScaleFeatures<T> encoder_forward(const Tensor<T>& x, bool training, Rng& rng) const {
        MultiScaleFeatures<T> feats;
        Tensor<T> y = stem_forward(x);
        int block_index = 0;
        for (int s = 0; s < 4; ++s) {
            for (int k = 0; k < cfg_.stage_blocks[static_cast<std::size_t>(s)]; ++k)
                y = hiera_block(y, s, block_index++, training, rng);
            feats.f[static_cast<std::size_t>(s)] = y;
            if (s < 3) y = stage_transition(y, s);
        }
        return feats;
    }

    Tensor<T> rfb_forward(const Tensor<T>& f, int scale_index) const {
        using namespace rangesam::ops;
        const RfbParams<T>& rp = rfbs_[static_cast<std::size_t>(scale_index)];
        auto ln_gelu = [](const Tensor<T>& t, const LayerNormParams<T>& ln) {
            return gelu(layer_norm(t, ln.gamma, ln.beta, 1));
        };
        Tensor<T> b0 = ln_gelu(conv2d(f, rp.br0.w, rp.br0.b), rp.ln0);
        Tensor<T> b1 = ln_gelu(conv2d(f, rp.br1_pre.w, rp.br1_pre.b), rp.ln1a);
        b1 = ln_gelu(conv2d(b1, rp.br1_conv.w, rp.br1_conv.b, 1, 1, 1, 1), rp.ln1b);
        Tensor<T> b2 = ln_gelu(conv2d(f, rp.br2_pre.w, rp.br2_pre.b), rp.ln2a);
        b2 = ln_gelu(conv2d(b2, rp.br2_conv.w, rp.br2_conv.b, 1, 3, 1, 3), rp.ln2b);
        Tensor<T> b3 = ln_gelu(conv2d(f, rp.br3_pre.w, rp.br3_pre.b), rp.ln3a);
        b3 = ln_gelu(conv2d(b3, rp.br3_conv.w, rp.br3_conv.b, 1, 5, 1, 5), rp.ln3b);
        Tensor<T> fused = conv2d(concat<T>({b0, b1, b2, b3}, 1), rp.fuse.w, rp.fuse.b);
        return add(fused, conv2d(f, rp.shortcut.w, rp.shortcut.b));
    }

    SegOutput<T> decoder_forward(const MultiScaleFeatures<T>& feats) const {
        using namespace rangesam::ops;
        const int out_h = feats.f[0].dim(2), out_w = feats.f[0].dim(3);
        SegOutput<T> out;
        std::vector<Tensor<T>> upsampled;
        for (int s = 0; s < 4; ++s) {
            Tensor<T> r = rfb_forward(feats.f[static_cast<std::size_t>(s)], s);
            const ConvParams<T>& ah = aux_heads_[static_cast<std::size_t>(s)];
            out.aux[static_cast<std::size_t>(s)] = conv2d(r, ah.w, ah.b);
            upsampled.push_back(r.dim(2) == out_h && r.dim(3) == out_w
                                    ? r
                                    : upsample_bilinear(r, out_h, out_w));
        }
        Tensor<T> y = conv2d(concat(upsampled, 1), reduce_.w, reduce_.b, 1, 1);
        y = gelu(layer_norm(y, reduce_ln_.gamma, reduce_ln_.beta, 1));
        out.main = conv2d(y, classifier_.w, classifier_.b);
        return out;
    }

    SegOutput<T> forward(const Tensor<T>& x, bool training, Rng& rng) const {
        return decoder_forward(encoder_forward(x, training, rng));
    }

    double drop_path_rate(int block_index) const {
        const int n = total_blocks_cached();
        if (n <= 1) return 0.0;
        return cfg_.drop_path_max * static_cast<double>(block_index) / static_cast<double>(n - 1);
    }

private:
    int total_blocks_cached() const { return cfg_.total_blocks(); }

    ModelConfig cfg_;
    std::vector<Parameter<T>> params_;

    ConvParams<T> stem_proj_, stem_conv_;
    LayerNormParams<T> stem_ln_;
    Tensor<T> pos_table_, pos_scale_;
    std::vector<BlockParams<T>> blocks_;
    std::vector<ConvParams<T>> transitions_;
    std::vector<RfbParams<T>> rfbs_;
    std::vector<ConvParams<T>> aux_heads_;
    ConvParams<T> reduce_;
    LayerNormParams<T> reduce_ln_;
    ConvParams<T> classifier_;
};

} // namespace rangesam::model
