#include "spritediff/trainer.hpp"

#include <cmath>
#include <cstring>

#include "spritediff/errors.hpp"
#include "spritediff/ops.hpp"

namespace spritediff {

namespace {

constexpr double kFinetuneBeta = 0.2;

Tensor stack_images(const std::vector<Tensor>& imgs) {
    int B = static_cast<int>(imgs.size());
    Shape s = imgs[0].shape();
    Shape out_shape;
    out_shape.push_back(B);
    for (int d : s) out_shape.push_back(d);
    std::vector<double> out;
    out.reserve(B * imgs[0].numel());
    for (const auto& im : imgs) {
        if (!same_shape(im.shape(), s)) throw ShapeError("stack: inhomogeneous shapes");
        out.insert(out.end(), im.data().begin(), im.data().end());
    }
    return Tensor::from_data(out_shape, std::move(out));
}

Tensor hflip_image(const Tensor& img) {
    Shape s = img.shape();  // [C,H,W]
    int C = s[0], H = s[1], W = s[2];
    std::vector<double> out(img.numel());
    const auto& d = img.data();
    for (int c = 0; c < C; ++c)
        for (int y = 0; y < H; ++y)
            for (int x = 0; x < W; ++x)
                out[(c * H + y) * W + x] = d[(c * H + y) * W + (W - 1 - x)];
    return Tensor::from_data(s, std::move(out));
}

Tensor q_sample_batch(const Tensor& x0, const std::vector<int>& ts, const Tensor& eps,
                      const NoiseSchedule& sched) {
    std::vector<double> out(x0.numel());
    int B = x0.shape()[0];
    int64_t per = x0.numel() / B;
    const auto& xd = x0.data();
    const auto& ed = eps.data();
    for (int b = 0; b < B; ++b) {
        double ab = sched.alpha_bar_at(ts[b]);
        double sa = std::sqrt(ab), sb = std::sqrt(1.0 - ab);
        for (int64_t i = 0; i < per; ++i)
            out[b * per + i] = sa * xd[b * per + i] + sb * ed[b * per + i];
    }
    return Tensor::from_data(x0.shape(), std::move(out));
}

double finish_step(Model& model, const Tensor& pred, const Tensor& eps, StageOptimizer& opt,
                   int step) {
    (void)model;
    Tensor loss = mse_loss(pred, eps);
    double v = loss.item();
    if (!std::isfinite(v))
        throw ValueError("training diverged: non-finite loss at step " + std::to_string(step));
    opt.adam.zero_grad();
    backward(loss);
    opt.adam.step();
    return v;
}

}  // namespace

std::string stage_name(Stage s) {
    switch (s) {
        case Stage::Base: return "base";
        case Stage::SePretrain: return "se_pretrain";
        case Stage::Finetune: return "finetune";
    }
    return "base";
}

Stage stage_from_name(const std::string& name) {
    if (name == "base") return Stage::Base;
    if (name == "se_pretrain") return Stage::SePretrain;
    if (name == "finetune") return Stage::Finetune;
    throw ConfigError("unknown stage '" + name + "'");
}

TrainConfig TrainConfig::defaults(Stage stage) {
    TrainConfig c;
    c.stage = stage;
    switch (stage) {
        case Stage::Base:
            c.lr_main = 2e-3;
            c.batch = 8;
            c.steps = 20000;
            break;
        case Stage::SePretrain:
            c.lr_main = 1e-3;
            c.batch = 4;
            c.steps = 2000;
            break;
        case Stage::Finetune:
            c.lr_main = 1e-6;
            c.lr_token = 5e-3;
            c.batch = 2;
            c.steps = 800;
            break;
    }
    return c;
}

TrainConfig TrainConfig::resolved() const {
    TrainConfig c = *this;
    TrainConfig d = defaults(stage);
    if (c.lr_main == 0.0) c.lr_main = d.lr_main;
    if (c.batch == 0) c.batch = d.batch;
    if (c.steps == 0) c.steps = d.steps;
    return c;
}

void TrainConfig::validate() const {
    if (lr_main <= 0.0 || lr_token <= 0.0) throw ConfigError("train config: learning rates must be positive");
    if (steps <= 0) throw ConfigError("train config: steps must be positive");
    if (batch <= 0) throw ConfigError("train config: batch must be positive");
    if (stage == Stage::Finetune && batch != 2)
        throw ConfigError("train config: fine-tuning batch is one reference + one regular sample");
}

StageOptimizer make_stage_optimizer(Model& model, const TrainConfig& cfg_in) {
    TrainConfig cfg = cfg_in.resolved();
    cfg.validate();
    ParamMap all = model.all_params();
    for (auto& [name, t] : all) t.set_requires_grad(false);
    model.s_star.set_requires_grad(false);

    auto is_fixed = [](const std::string& name) {
        return name == "unet.layout_conv.w" || name.rfind("se.pyramid.", 0) == 0;
    };
    auto select = [&](auto&& pred) {
        std::vector<std::string> names;
        for (auto& [name, t] : all)
            if (!is_fixed(name) && name != "s_star" && pred(name)) names.push_back(name);
        return names;
    };

    std::vector<std::string> main_names;
    switch (cfg.stage) {
        case Stage::Base:
            main_names = select([](const std::string& n) {
                return n.rfind("unet.", 0) == 0 || n.rfind("te.", 0) == 0;
            });
            break;
        case Stage::SePretrain:
            if (!model.se)
                throw ContractError("se pretraining requires an attached subject encoder");
            main_names = select([](const std::string& n) {
                return n.rfind("se.", 0) == 0 || n.find(".sea.") != std::string::npos;
            });
            break;
        case Stage::Finetune:
            main_names = select([&](const std::string& n) {
                if (n.rfind("unet.", 0) == 0 || n.rfind("te.", 0) == 0) return true;
                return cfg.use_subject_encoder && n.rfind("se.", 0) == 0;
            });
            break;
    }

    StageOptimizer opt;
    std::vector<Tensor> main_params;
    for (const auto& n : main_names) {
        all[n].set_requires_grad(true);
        main_params.push_back(all[n]);
        opt.param_names.push_back(n);
    }
    opt.adam.add_group(main_params, cfg.lr_main);
    if (cfg.stage == Stage::Finetune) {
        model.s_star.set_requires_grad(true);
        opt.adam.add_group({model.s_star}, cfg.lr_token);
        opt.param_names.push_back("s_star");
    }
    return opt;
}

double train_step_base(Model& model, const std::vector<SpriteSample>& data, const TrainConfig& cfg,
                       StageOptimizer& opt, int step) {
    Rng step_rng(cfg.seed, 0xBA5E0000ULL + static_cast<uint64_t>(step));
    Rng idx_rng = step_rng.substream(1);
    Rng t_rng = step_rng.substream(2);
    Rng noise_rng = step_rng.substream(3);

    int B = cfg.batch;
    std::vector<Tensor> imgs;
    std::vector<Caption> caps;
    std::vector<int> ts(B);
    for (int b = 0; b < B; ++b) {
        const auto& s = data[idx_rng.next_below(data.size())];
        imgs.push_back(s.image);
        caps.push_back(s.caption);
        ts[b] = static_cast<int>(t_rng.next_below(model.sched.T));
    }
    Tensor x0 = stack_images(imgs);
    Tensor eps = Tensor::gaussian(x0.shape(), noise_rng);
    Tensor x_t = q_sample_batch(x0, ts, eps, model.sched);
    Tensor text = model.text_features(caps);
    Tensor pred = model.eps(x_t, ts, text, nullptr, nullptr);
    return finish_step(model, pred, eps, opt, step);
}

double train_step_se(Model& model, const std::vector<SpriteSample>& data, const TrainConfig& cfg,
                     StageOptimizer& opt, int step) {
    if (!model.se) throw ContractError("se pretraining requires an attached subject encoder");
    Rng step_rng(cfg.seed, 0x5E000000ULL + static_cast<uint64_t>(step));
    Rng idx_rng = step_rng.substream(1);
    Rng t_rng = step_rng.substream(2);
    Rng noise_rng = step_rng.substream(3);
    Rng aug_rng = step_rng.substream(4);

    int B = cfg.batch;
    std::vector<Tensor> imgs, masks, cleans;
    std::vector<Caption> caps;
    std::vector<int> ts(B);
    for (int b = 0; b < B; ++b) {
        const auto& s = data[idx_rng.next_below(data.size())];
        imgs.push_back(s.image);
        masks.push_back(s.mask);
        caps.push_back(s.caption);
        ts[b] = static_cast<int>(t_rng.next_below(model.sched.T));
    }
    Tensor x0 = stack_images(imgs);
    Tensor mask = stack_images(masks);
    Tensor clean = remove_background(x0, mask);
    Tensor se_input = augment_subject_image(clean, aug_rng);
    SubjectFeatures subject = model.se->encode(se_input, 1.0);

    Tensor layout;
    if (cfg.layout_channel) layout = layout_channel(mask);
    Tensor eps = Tensor::gaussian(x0.shape(), noise_rng);
    Tensor x_t = q_sample_batch(x0, ts, eps, model.sched);
    Tensor text = model.text_features(caps);
    Tensor pred = model.eps(x_t, ts, text, &subject, nullptr, layout);
    return finish_step(model, pred, eps, opt, step);
}

double train_step_finetune(Model& model, const RefBundle& ref, const RegularSet& regulars,
                           const TrainConfig& cfg, StageOptimizer& opt, int step) {
    Rng step_rng(cfg.seed, 0xF17E0000ULL + static_cast<uint64_t>(step));
    Rng flip_rng = step_rng.substream(1);
    Rng idx_rng = step_rng.substream(2);
    Rng t_rng = step_rng.substream(3);
    Rng noise_rng = step_rng.substream(4);

    bool flip_ref = flip_rng.uniform() < 0.5;
    bool flip_reg = flip_rng.uniform() < 0.5;
    Tensor ref_img = flip_ref ? hflip_image(ref.image) : ref.image;
    Tensor ref_mask = flip_ref ? hflip_image(ref.mask) : ref.mask;
    Tensor clean_ref =
        remove_background(stack_images({ref_img}), stack_images({ref_mask}));

    size_t ri = idx_rng.next_below(regulars.images.size());
    Tensor reg_img = flip_reg ? hflip_image(regulars.images[ri]) : regulars.images[ri];

    Tensor x0 = concat({clean_ref, stack_images({reg_img})}, 0);
    std::vector<int> ts = {static_cast<int>(t_rng.next_below(model.sched.T)),
                           static_cast<int>(t_rng.next_below(model.sched.T))};
    Tensor eps = Tensor::gaussian(x0.shape(), noise_rng);
    Tensor x_t = q_sample_batch(x0, ts, eps, model.sched);

    Caption ref_cap;
    ref_cap.shape = ref.caption.shape;
    ref_cap.s_star = true;
    Tensor text = model.text_features({ref_cap, regulars.captions[ri]});

    SubjectFeatures subject;
    const SubjectFeatures* subject_ptr = nullptr;
    if (cfg.use_subject_encoder && model.se) {
        // The reference's subject features condition both batch rows.
        subject = model.se->encode(concat({clean_ref, clean_ref}, 0), model.stage_beta);
        subject_ptr = &subject;
    }
    Tensor pred = model.eps(x_t, ts, text, subject_ptr, nullptr);
    return finish_step(model, pred, eps, opt, step);
}

void run_training(Model& model, const std::vector<SpriteSample>& data, const RefBundle* ref,
                  const RegularSet* regulars, const TrainConfig& cfg_in, StageOptimizer& opt,
                  int start_step, const TrainLogger& log) {
    TrainConfig cfg = cfg_in.resolved();
    cfg.validate();
    for (int step = start_step; step < cfg.steps; ++step) {
        double loss = 0.0;
        switch (cfg.stage) {
            case Stage::Base:
                loss = train_step_base(model, data, cfg, opt, step);
                break;
            case Stage::SePretrain:
                loss = train_step_se(model, data, cfg, opt, step);
                break;
            case Stage::Finetune:
                loss = train_step_finetune(model, *ref, *regulars, cfg, opt, step);
                break;
        }
        if (log && (step % cfg.log_every == 0 || step + 1 == cfg.steps))
            log({step, stage_name(cfg.stage), loss, cfg.lr_main});
    }
}

Model pretrain_base(const DenoiserConfig& dcfg, const EncoderConfig& ecfg,
                    const NoiseSchedule& sched, const std::vector<SpriteSample>& data,
                    const TrainConfig& cfg_in, const TrainLogger& log) {
    if (data.empty()) throw ConfigError("pretrain_base: empty dataset");
    TrainConfig cfg = cfg_in.resolved();
    if (cfg.stage != Stage::Base) throw ConfigError("pretrain_base: config stage mismatch");
    Model model = Model::create(dcfg, ecfg, sched, cfg.seed);
    model.stage = "base";
    StageOptimizer opt = make_stage_optimizer(model, cfg);
    run_training(model, data, nullptr, nullptr, cfg, opt, 0, log);
    return model;
}

void pretrain_subject_encoder(Model& model, const std::vector<SpriteSample>& data,
                              const TrainConfig& cfg_in, const TrainLogger& log) {
    if (data.empty()) throw ConfigError("pretrain_subject_encoder: empty dataset");
    TrainConfig cfg = cfg_in.resolved();
    if (cfg.stage != Stage::SePretrain)
        throw ConfigError("pretrain_subject_encoder: config stage mismatch");
    model.attach_subject_encoder();
    model.stage = "se_pretrain";
    model.stage_beta = 1.0;  // injection scale during this stage
    StageOptimizer opt = make_stage_optimizer(model, cfg);
    run_training(model, data, nullptr, nullptr, cfg, opt, 0, log);
}

RegularSet generate_regular_set(const Model& model, const RefBundle& ref,
                                const RegularGenSpec& spec) {
    if (spec.n <= 0) throw ConfigError("generate_regular_set: n must be positive");
    if (!model.se) throw ContractError("generate_regular_set: model has no subject encoder");
    Caption class_cap;
    class_cap.shape = ref.caption.shape;

    RegularSet set;
    for (int i = 0; i < spec.n; ++i) {
        SampleSpec s;
        s.prompt = class_cap;
        s.seed = spec.seed + 0x9E37ULL * static_cast<uint64_t>(i + 1);
        s.use_subject = true;
        s.beta = spec.beta;
        s.use_ref_attention = true;
        s.omega_ref = spec.omega_ref;
        s.use_mask = false;  // background is expected to carry over
        s.use_guidance = true;
        s.guidance = spec.guidance;
        s.ancestral = spec.ancestral;
        s.steps = spec.ddim_steps;
        set.images.push_back(sample_image(model, s, &ref));
        set.captions.push_back(class_cap);
    }
    return set;
}

void finetune_subject(Model& model, const RefBundle& ref, const RegularSet& regulars,
                      const TrainConfig& cfg_in, const TrainLogger& log) {
    if (regulars.images.empty()) throw ConfigError("finetune_subject: missing regular set");
    if (regulars.images.size() != regulars.captions.size())
        throw ConfigError("finetune_subject: regular set images/captions mismatch");
    TrainConfig cfg = cfg_in.resolved();
    if (cfg.stage != Stage::Finetune) throw ConfigError("finetune_subject: config stage mismatch");
    if (!ref.caption.shape) throw ContractError("finetune_subject: reference caption needs a class word");

    model.class_word_token = Vocab::shape_token(*ref.caption.shape);
    // [S*] starts as a copy of the class word embedding.
    const auto& table = model.text.token_table.data();
    int D = model.dcfg.text_dim;
    auto& star = model.s_star.mutable_data();
    for (int d = 0; d < D; ++d)
        star[d] = table[static_cast<int64_t>(model.class_word_token) * D + d];
    model.stage = "finetune";
    model.stage_beta = kFinetuneBeta;

    StageOptimizer opt = make_stage_optimizer(model, cfg);
    run_training(model, {}, &ref, &regulars, cfg, opt, 0, log);
}

}  // namespace spritediff
