// spritediff CLI: dataset generation, the three training stages, guided
// sampling, metric evaluation, the ablation sweep, and a selftest.

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "spritediff/checkpoint.hpp"
#include "spritediff/errors.hpp"
#include "spritediff/image_io.hpp"
#include "spritediff/metrics.hpp"
#include "spritediff/model.hpp"
#include "spritediff/pipeline.hpp"
#include "spritediff/selftest.hpp"
#include "spritediff/sprites.hpp"
#include "spritediff/trainer.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace spritediff;

namespace {

std::string data_dir() {
    const char* env = std::getenv("SPRITEDIFF_DATA_DIR");
    return env && *env ? env : ".";
}

std::string under_data_dir(const std::string& path) {
    fs::path p(path);
    if (p.is_absolute() || path.rfind("./", 0) == 0 || path.rfind("../", 0) == 0) return path;
    return (fs::path(data_dir()) / p).string();
}

struct Preset {
    double beta = 0.2;
    double omega_ref = 2.5;
};

Preset preset_by_name(const std::string& name) {
    if (name == "natural") return {0.2, 3.0};
    if (name == "anime" || name == "default") return {0.2, 2.5};
    throw ConfigError("unknown preset '" + name + "' (expected natural|anime|default)");
}

json load_config_file(const std::string& path) {
    if (path.empty()) return json::object();
    std::ifstream f(path);
    if (!f) throw IoError("cannot open config file '" + path + "'");
    try {
        return json::parse(f);
    } catch (const std::exception& e) {
        throw ConfigError("config file '" + path + "': " + e.what());
    }
}

// Precedence: CLI flag > config file > preset/built-in default.
template <typename T>
void apply_config(CLI::Option* opt, const json& cfg, const char* key, T& value) {
    if (opt && opt->count() > 0) return;
    if (cfg.contains(key)) value = cfg.at(key).get<T>();
}

void write_manifest(const std::string& path, const json& manifest) {
    std::ofstream f(path);
    if (!f) throw IoError("cannot write manifest '" + path + "'");
    f << manifest.dump(2) << "\n";
}

TrainLogger jsonl_logger(std::ofstream& log_file) {
    return [&log_file](const TrainLogEntry& e) {
        json j{{"step", e.step}, {"stage", e.stage}, {"loss", e.loss}, {"lr", e.lr}};
        log_file << j.dump() << "\n";
        log_file.flush();
        std::cout << "step " << e.step << " [" << e.stage << "] loss " << std::setprecision(6)
                  << e.loss << "\n";
    };
}

RefBundle load_ref(const std::string& image_path, const std::string& mask_path,
                   const std::string& caption_text) {
    RefBundle ref;
    ref.image = read_ppm(under_data_dir(image_path));
    if (!mask_path.empty())
        ref.mask = read_pgm(under_data_dir(mask_path));
    else
        ref.mask = estimate_foreground_mask(ref.image);
    ref.caption = Caption::parse_text(caption_text);
    return ref;
}

DenoiserConfig denoiser_cfg_from_flags(int base_channels, const std::vector<int>& mult,
                                       const std::vector<int>& attn, int heads) {
    DenoiserConfig d;
    d.base_channels = base_channels;
    if (!mult.empty()) d.channel_mult = mult;
    if (!attn.empty()) d.attn_resolutions = attn;
    d.heads = heads;
    return d;
}

int cmd_dataset(int n, uint64_t seed, const std::string& out_dir) {
    fs::create_directories(under_data_dir(out_dir));
    auto data = gen_dataset(n, seed);
    json files = json::array();
    for (int i = 0; i < n; ++i) {
        char name[32];
        std::snprintf(name, sizeof(name), "%05d", i);
        std::string img = std::string(name) + ".ppm";
        std::string msk = std::string(name) + "_mask.pgm";
        write_ppm((fs::path(under_data_dir(out_dir)) / img).string(), data[i].image);
        write_pgm((fs::path(under_data_dir(out_dir)) / msk).string(), data[i].mask);
        files.push_back(json{{"image", img},
                             {"mask", msk},
                             {"caption", data[i].caption.text()},
                             {"detailed_caption", caption_for(data[i].sprite, true).text()}});
    }
    json manifest{{"command", "dataset"}, {"n", n}, {"seed", std::to_string(seed)}, {"files", files}};
    write_manifest((fs::path(under_data_dir(out_dir)) / "manifest.json").string(), manifest);
    std::cout << "wrote " << n << " sprites to " << under_data_dir(out_dir) << "\n";
    return 0;
}

}  // namespace

int run(int argc, char** argv) {
    CLI::App app{"spritediff: subject-driven diffusion lab on a synthetic sprite world"};
    app.require_subcommand(1);

    // ------------------------------------------------------------ dataset
    auto* c_dataset = app.add_subcommand("dataset", "Materialize a sprite dataset to disk");
    int ds_n = 256;
    uint64_t ds_seed = 0;
    std::string ds_out = "dataset";
    c_dataset->add_option("--n", ds_n, "Number of samples");
    c_dataset->add_option("--seed", ds_seed, "Dataset seed");
    c_dataset->add_option("--out-dir", ds_out, "Output directory");

    // ----------------------------------------------------------- pretrain
    auto* c_pre = app.add_subcommand("pretrain", "Base text-to-image pretraining");
    int pre_n = 5000, pre_steps = 20000, pre_batch = 8;
    double pre_lr = 2e-3;
    uint64_t pre_seed = 0, pre_data_seed = 0;
    int pre_base_ch = 32, pre_heads = 2;
    std::vector<int> pre_mult, pre_attn;
    int pre_T = kDefaultT;
    std::string pre_out = "base.ckpt", pre_log = "";
    c_pre->add_option("--n", pre_n, "Dataset size");
    c_pre->add_option("--data-seed", pre_data_seed, "Dataset seed");
    c_pre->add_option("--steps", pre_steps, "Training steps");
    c_pre->add_option("--batch", pre_batch, "Batch size");
    c_pre->add_option("--lr", pre_lr, "Learning rate");
    c_pre->add_option("--seed", pre_seed, "Training seed");
    c_pre->add_option("--base-channels", pre_base_ch, "U-Net base channels");
    c_pre->add_option("--channel-mult", pre_mult, "U-Net channel multipliers");
    c_pre->add_option("--attn-res", pre_attn, "Attention resolutions");
    c_pre->add_option("--heads", pre_heads, "Attention heads");
    c_pre->add_option("--timesteps", pre_T, "Diffusion steps T");
    c_pre->add_option("--out", pre_out, "Output checkpoint");
    c_pre->add_option("--log", pre_log, "JSONL training log path");

    // ----------------------------------------------------------- train-se
    auto* c_se = app.add_subcommand("train-se", "Subject-encoder pretraining (stage 1)");
    std::string se_ckpt, se_out = "se.ckpt", se_log = "";
    int se_n = 0, se_steps = 2000, se_batch = 4;
    double se_lr = 1e-3;
    uint64_t se_seed = 1, se_data_seed = 0;
    bool se_no_layout = false;
    c_se->add_option("--checkpoint", se_ckpt, "Base checkpoint")->required();
    c_se->add_option("--n", se_n, "Dataset size (default: same as pretraining preset)");
    c_se->add_option("--data-seed", se_data_seed, "Dataset seed");
    c_se->add_option("--steps", se_steps, "Training steps");
    c_se->add_option("--batch", se_batch, "Batch size");
    c_se->add_option("--lr", se_lr, "Learning rate");
    c_se->add_option("--seed", se_seed, "Training seed");
    c_se->add_flag("--no-layout", se_no_layout, "Disable the layout-conditioning channel");
    c_se->add_option("--out", se_out, "Output checkpoint");
    c_se->add_option("--log", se_log, "JSONL training log path");

    // ----------------------------------------------------------- regulars
    auto* c_reg = app.add_subcommand("regulars", "Generate the regular-image set");
    std::string reg_ckpt, reg_ref, reg_ref_mask, reg_ref_cap, reg_out = "regulars";
    int reg_n = 32;
    uint64_t reg_seed = 0;
    bool reg_ddim = false;
    double reg_beta = 0.2, reg_omega_ref = 2.5;
    c_reg->add_option("--checkpoint", reg_ckpt)->required();
    c_reg->add_option("--ref-image", reg_ref)->required();
    c_reg->add_option("--ref-mask", reg_ref_mask, "Reference mask (PGM); estimated when absent");
    c_reg->add_option("--ref-caption", reg_ref_cap, "Detailed reference caption")->required();
    c_reg->add_option("--n", reg_n, "Number of regular images");
    c_reg->add_option("--seed", reg_seed);
    c_reg->add_flag("--ddim", reg_ddim, "Use DDIM instead of ancestral sampling");
    c_reg->add_option("--beta", reg_beta);
    c_reg->add_option("--omega-ref", reg_omega_ref);
    c_reg->add_option("--out-dir", reg_out);

    // ----------------------------------------------------------- finetune
    auto* c_ft = app.add_subcommand("finetune", "Subject-driven fine-tuning (stage 2)");
    std::string ft_ckpt, ft_ref, ft_ref_mask, ft_ref_cap, ft_regulars, ft_out = "finetuned.ckpt",
                                                           ft_log = "";
    int ft_steps = 800;
    double ft_lr = 1e-6, ft_lr_token = 5e-3;
    uint64_t ft_seed = 2;
    bool ft_no_se = false;
    c_ft->add_option("--checkpoint", ft_ckpt)->required();
    c_ft->add_option("--ref-image", ft_ref)->required();
    c_ft->add_option("--ref-mask", ft_ref_mask);
    c_ft->add_option("--ref-caption", ft_ref_cap)->required();
    c_ft->add_option("--regulars-dir", ft_regulars, "Directory produced by `regulars`")->required();
    c_ft->add_option("--steps", ft_steps, "Training steps (800-1200 preset range)");
    c_ft->add_option("--lr", ft_lr, "Main learning rate");
    c_ft->add_option("--lr-token", ft_lr_token, "[S*] embedding learning rate");
    c_ft->add_option("--seed", ft_seed);
    c_ft->add_flag("--no-subject-encoder", ft_no_se, "Fine-tune without subject conditioning");
    c_ft->add_option("--out", ft_out);
    c_ft->add_option("--log", ft_log, "JSONL training log path");

    // ----------------------------------------------------------- generate
    auto* c_gen = app.add_subcommand("generate", "Subject-driven inference (stage 3)");
    std::string g_ckpt, g_prompt, g_ref, g_ref_mask, g_ref_cap, g_out = "out.ppm";
    std::string g_preset = "default", g_config;
    double g_beta = 0.2, g_omega_ref = 2.5, g_omega_r = 2.0, g_omega_c = 2.0, g_pr = 0.9;
    int g_dt = 0, g_dt_prime = 0, g_steps = 25;
    uint64_t g_seed = 0;
    bool g_mask = true, g_no_subject = false, g_no_ssa = false, g_no_guidance = false;
    c_gen->add_option("--checkpoint", g_ckpt)->required();
    c_gen->add_option("--prompt", g_prompt, "Generation prompt")->required();
    c_gen->add_option("--ref-image", g_ref, "Reference image (PPM)");
    c_gen->add_option("--ref-mask", g_ref_mask);
    c_gen->add_option("--ref-caption", g_ref_cap, "Reference caption (defaults to prompt)");
    auto* o_beta = c_gen->add_option("--beta", g_beta, "Subject-encoder scale");
    auto* o_oref = c_gen->add_option("--omega-ref", g_omega_ref, "S-S-A reference weight");
    auto* o_or = c_gen->add_option("--omega-r", g_omega_r, "Reference guidance scale");
    auto* o_oc = c_gen->add_option("--omega-c", g_omega_c, "Text guidance scale");
    auto* o_pr = c_gen->add_option("--p-r", g_pr, "Probability of the reference branch");
    auto* o_dt = c_gen->add_option("--dt", g_dt, "Reference noise offset (conditional branch)");
    auto* o_dtp = c_gen->add_option("--dt-prime", g_dt_prime, "Reference noise offset (uncond branch)");
    auto* o_steps = c_gen->add_option("--steps", g_steps, "DDIM steps");
    c_gen->add_option("--seed", g_seed);
    c_gen->add_flag("--mask,!--no-mask", g_mask, "Use the foreground mask in S-S-A");
    c_gen->add_flag("--no-subject", g_no_subject, "Disable subject-encoder injection");
    c_gen->add_flag("--no-ssa", g_no_ssa, "Disable self-subject-attention");
    c_gen->add_flag("--no-guidance", g_no_guidance, "Plain conditional sampling");
    c_gen->add_option("--preset", g_preset, "natural|anime|default");
    c_gen->add_option("--config", g_config, "JSON config file (flag > file > preset)");
    c_gen->add_option("--out", g_out);

    // --------------------------------------------------------------- eval
    auto* c_eval = app.add_subcommand("eval", "Identity/prompt scores over a directory");
    std::string e_dir, e_ref, e_ref_mask, e_caption, e_out = "metrics.json";
    c_eval->add_option("--dir", e_dir, "Directory of PPM images")->required();
    c_eval->add_option("--ref-image", e_ref, "Reference for identity scoring");
    c_eval->add_option("--ref-mask", e_ref_mask);
    c_eval->add_option("--caption", e_caption, "Caption for prompt scoring (overrides manifest)");
    c_eval->add_option("--out", e_out, "Metrics JSON path");

    // ------------------------------------------------------------- ablate
    auto* c_abl = app.add_subcommand("ablate", "Sweep beta and omega_ref, plus mask/layout variants");
    std::string a_ckpt, a_nolayout_ckpt, a_ref, a_ref_mask, a_ref_cap, a_out = "ablation";
    int a_seeds = 4, a_steps = 25;
    uint64_t a_seed = 0;
    c_abl->add_option("--checkpoint", a_ckpt)->required();
    c_abl->add_option("--nolayout-checkpoint", a_nolayout_ckpt,
                      "SE checkpoint trained with --no-layout (adds the layout ablation row)");
    c_abl->add_option("--ref-image", a_ref)->required();
    c_abl->add_option("--ref-mask", a_ref_mask);
    c_abl->add_option("--ref-caption", a_ref_cap, "Detailed reference caption")->required();
    c_abl->add_option("--seeds", a_seeds, "Seeds per grid cell");
    c_abl->add_option("--seed", a_seed, "Base seed");
    c_abl->add_option("--steps", a_steps, "DDIM steps");
    c_abl->add_option("--out-dir", a_out);

    // ----------------------------------------------------------- selftest
    app.add_subcommand("selftest", "Run the built-in oracle/invariant suite");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        if (e.get_exit_code() == 0) return app.exit(e);  // --help
        std::cout << "error: category=usage msg=\"" << e.what() << "\"\n";
        return 7;
    }

    if (app.got_subcommand("selftest")) {
        return run_selftest(std::cout) == 0 ? 0 : 1;
    }

    if (app.got_subcommand("dataset")) return cmd_dataset(ds_n, ds_seed, ds_out);

    if (app.got_subcommand("pretrain")) {
        auto data = gen_dataset(pre_n, pre_data_seed);
        TrainConfig cfg = TrainConfig::defaults(Stage::Base);
        cfg.steps = pre_steps;
        cfg.batch = pre_batch;
        cfg.lr_main = pre_lr;
        cfg.seed = pre_seed;
        std::ofstream log_file(pre_log.empty() ? "/dev/null" : under_data_dir(pre_log));
        Model model = pretrain_base(denoiser_cfg_from_flags(pre_base_ch, pre_mult, pre_attn, pre_heads),
                                    EncoderConfig{}, make_schedule(pre_T, kDefaultBetaStart, kDefaultBetaEnd),
                                    data, cfg, jsonl_logger(log_file));
        save_checkpoint(under_data_dir(pre_out), model, nullptr, &cfg);
        std::cout << "saved " << under_data_dir(pre_out) << "\n";
        return 0;
    }

    if (app.got_subcommand("train-se")) {
        auto loaded = load_checkpoint(under_data_dir(se_ckpt));
        int n = se_n > 0 ? se_n : 5000;
        auto data = gen_dataset(n, se_data_seed);
        TrainConfig cfg = TrainConfig::defaults(Stage::SePretrain);
        cfg.steps = se_steps;
        cfg.batch = se_batch;
        cfg.lr_main = se_lr;
        cfg.seed = se_seed;
        cfg.layout_channel = !se_no_layout;
        std::ofstream log_file(se_log.empty() ? "/dev/null" : under_data_dir(se_log));
        pretrain_subject_encoder(loaded.model, data, cfg, jsonl_logger(log_file));
        save_checkpoint(under_data_dir(se_out), loaded.model, nullptr, &cfg);
        std::cout << "saved " << under_data_dir(se_out) << "\n";
        return 0;
    }

    if (app.got_subcommand("regulars")) {
        auto loaded = load_checkpoint(under_data_dir(reg_ckpt));
        RefBundle ref = load_ref(reg_ref, reg_ref_mask, reg_ref_cap);
        RegularGenSpec spec;
        spec.n = reg_n;
        spec.seed = reg_seed;
        spec.beta = reg_beta;
        spec.omega_ref = reg_omega_ref;
        spec.ancestral = !reg_ddim;
        RegularSet set = generate_regular_set(loaded.model, ref, spec);
        fs::create_directories(under_data_dir(reg_out));
        json files = json::array();
        for (int i = 0; i < reg_n; ++i) {
            char name[32];
            std::snprintf(name, sizeof(name), "reg%04d.ppm", i);
            write_ppm((fs::path(under_data_dir(reg_out)) / name).string(), set.images[i]);
            files.push_back(json{{"image", name}, {"caption", set.captions[i].text()}});
        }
        json manifest{{"command", "regulars"},
                      {"checkpoint", reg_ckpt},
                      {"n", reg_n},
                      {"seed", std::to_string(reg_seed)},
                      {"beta", reg_beta},
                      {"omega_ref", reg_omega_ref},
                      {"ancestral", !reg_ddim},
                      {"files", files}};
        write_manifest((fs::path(under_data_dir(reg_out)) / "manifest.json").string(), manifest);
        std::cout << "wrote " << reg_n << " regular images to " << under_data_dir(reg_out) << "\n";
        return 0;
    }

    if (app.got_subcommand("finetune")) {
        auto loaded = load_checkpoint(under_data_dir(ft_ckpt));
        RefBundle ref = load_ref(ft_ref, ft_ref_mask, ft_ref_cap);
        RegularSet regulars;
        {
            std::ifstream mf(fs::path(under_data_dir(ft_regulars)) / "manifest.json");
            if (!mf) throw ConfigError("missing regular set manifest in '" + ft_regulars + "'");
            json manifest = json::parse(mf);
            for (const auto& e : manifest.at("files")) {
                regulars.images.push_back(read_ppm(
                    (fs::path(under_data_dir(ft_regulars)) / e.at("image").get<std::string>()).string()));
                regulars.captions.push_back(Caption::parse_text(e.at("caption")));
            }
        }
        TrainConfig cfg = TrainConfig::defaults(Stage::Finetune);
        cfg.steps = ft_steps;
        cfg.lr_main = ft_lr;
        cfg.lr_token = ft_lr_token;
        cfg.seed = ft_seed;
        cfg.use_subject_encoder = !ft_no_se;
        std::ofstream log_file(ft_log.empty() ? "/dev/null" : under_data_dir(ft_log));
        finetune_subject(loaded.model, ref, regulars, cfg, jsonl_logger(log_file));
        save_checkpoint(under_data_dir(ft_out), loaded.model, nullptr, &cfg);
        std::cout << "saved " << under_data_dir(ft_out) << "\n";
        return 0;
    }

    if (app.got_subcommand("generate")) {
        json cfg_file = load_config_file(g_config);
        Preset preset = preset_by_name(g_preset);
        if (o_beta->count() == 0 && !cfg_file.contains("beta")) g_beta = preset.beta;
        if (o_oref->count() == 0 && !cfg_file.contains("omega_ref")) g_omega_ref = preset.omega_ref;
        apply_config(o_beta, cfg_file, "beta", g_beta);
        apply_config(o_oref, cfg_file, "omega_ref", g_omega_ref);
        apply_config(o_or, cfg_file, "omega_r", g_omega_r);
        apply_config(o_oc, cfg_file, "omega_c", g_omega_c);
        apply_config(o_pr, cfg_file, "p_r", g_pr);
        apply_config(o_dt, cfg_file, "dt", g_dt);
        apply_config(o_dtp, cfg_file, "dt_prime", g_dt_prime);
        apply_config(o_steps, cfg_file, "steps", g_steps);

        auto loaded = load_checkpoint(under_data_dir(g_ckpt));
        SampleSpec spec;
        spec.prompt = Caption::parse_text(g_prompt);
        spec.steps = g_steps;
        spec.seed = g_seed;
        spec.use_subject = !g_no_subject && loaded.model.se.has_value();
        spec.beta = g_beta;
        spec.use_ref_attention = !g_no_ssa;
        spec.omega_ref = g_omega_ref;
        spec.use_mask = g_mask;
        spec.use_guidance = !g_no_guidance;
        spec.guidance.omega_r = g_omega_r;
        spec.guidance.omega_c = g_omega_c;
        spec.guidance.p_r = g_pr;
        spec.guidance.dt_minus = g_dt;
        spec.guidance.dt_plus = g_dt_prime;

        std::optional<RefBundle> ref;
        if (!g_ref.empty())
            ref = load_ref(g_ref, g_ref_mask, g_ref_cap.empty() ? g_prompt : g_ref_cap);
        Tensor img = sample_image(loaded.model, spec, ref ? &*ref : nullptr);
        write_ppm(under_data_dir(g_out), img);

        json resolved{{"prompt", g_prompt},        {"beta", spec.beta},
                      {"omega_ref", spec.omega_ref}, {"omega_r", g_omega_r},
                      {"omega_c", g_omega_c},      {"p_r", g_pr},
                      {"dt", g_dt},                {"dt_prime", g_dt_prime},
                      {"steps", g_steps},          {"seed", std::to_string(g_seed)},
                      {"mask", g_mask},            {"subject", spec.use_subject},
                      {"ssa", spec.use_ref_attention}, {"guidance", spec.use_guidance},
                      {"preset", g_preset},        {"ref_image", g_ref}};
        write_manifest(under_data_dir(g_out) + ".json",
                       json{{"command", "generate"},
                            {"checkpoint", g_ckpt},
                            {"resolved", resolved},
                            {"output", g_out}});
        std::cout << "wrote " << under_data_dir(g_out) << "\n";
        return 0;
    }

    if (app.got_subcommand("eval")) {
        const FeaturePyramid& enc = FeaturePyramid::fixed();
        std::optional<Tensor> ref_img, ref_mask;
        if (!e_ref.empty()) {
            ref_img = read_ppm(under_data_dir(e_ref));
            ref_mask = e_ref_mask.empty() ? estimate_foreground_mask(*ref_img)
                                          : read_pgm(under_data_dir(e_ref_mask));
        }
        std::map<std::string, std::string> captions;
        {
            std::ifstream mf(fs::path(under_data_dir(e_dir)) / "manifest.json");
            if (mf) {
                json manifest = json::parse(mf);
                for (const auto& e : manifest.at("files"))
                    captions[e.at("image")] = e.at("caption");
            }
        }
        json per_image = json::array();
        double id_sum = 0.0, pr_sum = 0.0;
        int id_n = 0, pr_n = 0;
        std::vector<fs::path> files;
        for (const auto& entry : fs::directory_iterator(under_data_dir(e_dir)))
            if (entry.path().extension() == ".ppm") files.push_back(entry.path());
        std::sort(files.begin(), files.end());
        if (files.empty()) throw ConfigError("eval: no .ppm files in '" + e_dir + "'");
        for (const auto& p : files) {
            Tensor img = read_ppm(p.string());
            json rec{{"image", p.filename().string()}};
            if (ref_img) {
                double s = identity_score(img, *ref_img, enc, Tensor(), *ref_mask);
                rec["identity"] = s;
                id_sum += s;
                ++id_n;
            }
            std::string cap = e_caption;
            if (cap.empty() && captions.count(p.filename().string()))
                cap = captions[p.filename().string()];
            if (!cap.empty()) {
                double s = prompt_score(img, Caption::parse_text(cap));
                rec["prompt"] = s;
                pr_sum += s;
                ++pr_n;
            }
            per_image.push_back(rec);
        }
        json out{{"command", "eval"}, {"dir", e_dir}, {"per_image", per_image}};
        if (id_n) out["mean_identity"] = id_sum / id_n;
        if (pr_n) out["mean_prompt"] = pr_sum / pr_n;
        write_manifest(under_data_dir(e_out), out);
        std::cout << out.dump(2) << "\n";
        return 0;
    }

    if (app.got_subcommand("ablate")) {
        auto loaded = load_checkpoint(under_data_dir(a_ckpt));
        RefBundle ref = load_ref(a_ref, a_ref_mask, a_ref_cap);
        Caption prompt = ref.caption;
        prompt.detail.reset();  // concise prompt; details must come from the reference
        const FeaturePyramid& enc = FeaturePyramid::fixed();

        auto run_cell = [&](const Model& model, double beta, double omega_ref, bool use_mask,
                            const std::string& label) {
            double id_sum = 0.0, pr_sum = 0.0;
            for (int s = 0; s < a_seeds; ++s) {
                SampleSpec spec;
                spec.prompt = prompt;
                spec.steps = a_steps;
                spec.seed = a_seed + 1000ULL * s + 17ULL;
                spec.use_subject = model.se.has_value() && beta > 0.0;
                spec.beta = beta;
                spec.use_ref_attention = true;
                spec.omega_ref = omega_ref;
                spec.use_mask = use_mask;
                Tensor img = sample_image(model, spec, &ref);
                id_sum += identity_score(img, ref.image, enc, Tensor(), ref.mask);
                pr_sum += prompt_score(img, prompt);
            }
            json cell{{"label", label},       {"beta", beta},
                      {"omega_ref", omega_ref}, {"mask", use_mask},
                      {"identity", id_sum / a_seeds}, {"prompt", pr_sum / a_seeds}};
            return cell;
        };

        const std::vector<double> betas = {0.0, 0.1, 0.2, 0.5};
        const std::vector<double> omegas = {0.0, 1.0, 2.5, 10.0};
        json cells = json::array();
        std::cout << std::setw(22) << "cell" << std::setw(10) << "identity" << std::setw(10)
                  << "prompt" << "\n";
        auto emit = [&](json cell) {
            std::cout << std::setw(22) << cell["label"].get<std::string>() << std::setw(10)
                      << std::fixed << std::setprecision(4) << cell["identity"].get<double>()
                      << std::setw(10) << cell["prompt"].get<double>() << "\n";
            cells.push_back(std::move(cell));
        };
        for (double b : betas)
            for (double w : omegas) {
                char label[64];
                std::snprintf(label, sizeof(label), "beta=%.1f omega=%.1f", b, w);
                emit(run_cell(loaded.model, b, w, true, label));
            }
        emit(run_cell(loaded.model, 0.2, 2.5, false, "mask_off"));
        if (!a_nolayout_ckpt.empty()) {
            auto nol = load_checkpoint(under_data_dir(a_nolayout_ckpt));
            emit(run_cell(nol.model, 0.2, 2.5, true, "se_no_layout"));
        } else {
            std::cout << "(se_no_layout row skipped: pass --nolayout-checkpoint to include it)\n";
        }

        fs::create_directories(under_data_dir(a_out));
        write_manifest((fs::path(under_data_dir(a_out)) / "ablation.json").string(),
                       json{{"command", "ablate"},
                            {"checkpoint", a_ckpt},
                            {"seeds", a_seeds},
                            {"seed", std::to_string(a_seed)},
                            {"steps", a_steps},
                            {"prompt", prompt.text()},
                            {"cells", cells}});
        return 0;
    }

    return 0;
}

int main(int argc, char** argv) {
    try {
        return run(argc, argv);
    } catch (const ConfigError& e) {
        std::cout << "error: category=config msg=\"" << e.what() << "\"\n";
        return 2;
    } catch (const ShapeError& e) {
        std::cout << "error: category=shape msg=\"" << e.what() << "\"\n";
        return 3;
    } catch (const ValueError& e) {
        std::cout << "error: category=value msg=\"" << e.what() << "\"\n";
        return 4;
    } catch (const IoError& e) {
        std::cout << "error: category=io msg=\"" << e.what() << "\"\n";
        return 5;
    } catch (const CheckpointError& e) {
        std::cout << "error: category=checkpoint msg=\"" << e.what() << "\"\n";
        return 6;
    } catch (const ContractError& e) {
        std::cout << "error: category=contract msg=\"" << e.what() << "\"\n";
        return 1;
    } catch (const std::exception& e) {
        std::cout << "error: category=internal msg=\"" << e.what() << "\"\n";
        return 1;
    }
}
