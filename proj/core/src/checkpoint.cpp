#include "spritediff/checkpoint.hpp"

#include <cstring>
#include <fstream>
#include <sstream>

#include "spritediff/errors.hpp"

namespace spritediff {

using nlohmann::json;

namespace {

json denoiser_config_json(const DenoiserConfig& c) {
    return json{{"image_size", c.image_size},
                {"in_channels", c.in_channels},
                {"base_channels", c.base_channels},
                {"channel_mult", c.channel_mult},
                {"attn_resolutions", c.attn_resolutions},
                {"heads", c.heads},
                {"text_dim", c.text_dim},
                {"time_dim", c.time_dim},
                {"se_dim", c.se_dim},
                {"norm_groups", c.norm_groups}};
}

DenoiserConfig denoiser_config_from(const json& j) {
    DenoiserConfig c;
    c.image_size = j.at("image_size");
    c.in_channels = j.at("in_channels");
    c.base_channels = j.at("base_channels");
    c.channel_mult = j.at("channel_mult").get<std::vector<int>>();
    c.attn_resolutions = j.at("attn_resolutions").get<std::vector<int>>();
    c.heads = j.at("heads");
    c.text_dim = j.at("text_dim");
    c.time_dim = j.at("time_dim");
    c.se_dim = j.at("se_dim");
    c.norm_groups = j.at("norm_groups");
    return c;
}

json encoder_config_json(const EncoderConfig& c) {
    return json{{"tap_layers", c.tap_layers}, {"out_dim", c.out_dim}, {"n_resblocks", c.n_resblocks}};
}

EncoderConfig encoder_config_from(const json& j) {
    EncoderConfig c;
    c.tap_layers = j.at("tap_layers").get<std::vector<int>>();
    c.out_dim = j.at("out_dim");
    c.n_resblocks = j.at("n_resblocks");
    return c;
}

}  // namespace

json train_config_json(const TrainConfig& cfg) {
    return json{{"stage", stage_name(cfg.stage)},
                {"lr_main", cfg.lr_main},
                {"lr_token", cfg.lr_token},
                {"batch", cfg.batch},
                {"steps", cfg.steps},
                {"seed", std::to_string(cfg.seed)},
                {"layout_channel", cfg.layout_channel},
                {"use_subject_encoder", cfg.use_subject_encoder}};
}

TrainConfig train_config_from_json(const json& j) {
    TrainConfig c;
    c.stage = stage_from_name(j.at("stage"));
    c.lr_main = j.at("lr_main");
    c.lr_token = j.at("lr_token");
    c.batch = j.at("batch");
    c.steps = j.at("steps");
    c.seed = std::stoull(j.at("seed").get<std::string>());
    c.layout_channel = j.at("layout_channel");
    c.use_subject_encoder = j.at("use_subject_encoder");
    return c;
}

void save_checkpoint(const std::string& path, const Model& model, const StageOptimizer* opt,
                     const TrainConfig* train_cfg) {
    ParamMap params = model.all_params();

    // Name -> buffer; optimizer moments ride along under the opt. prefix.
    std::map<std::string, const std::vector<double>*> buffers;
    for (const auto& [name, t] : params) buffers[name] = &t.node()->data;
    if (opt) {
        const auto& slots = const_cast<StageOptimizer*>(opt)->adam.slots();
        if (slots.size() != opt->param_names.size())
            throw ContractError("save_checkpoint: optimizer slot/name mismatch");
        for (size_t i = 0; i < slots.size(); ++i) {
            buffers["opt.m." + opt->param_names[i]] = &slots[i].m;
            buffers["opt.v." + opt->param_names[i]] = &slots[i].v;
        }
    }

    json tensors = json::object();
    uint64_t offset = 0;
    for (const auto& [name, buf] : buffers) {
        uint64_t bytes = buf->size() * sizeof(double);
        json entry;
        if (params.count(name))
            entry["shape"] = params.at(name).shape();
        else
            entry["shape"] = std::vector<int>{static_cast<int>(buf->size())};
        entry["offset"] = offset;
        entry["bytes"] = bytes;
        tensors[name] = entry;
        offset += bytes;
    }

    json manifest;
    manifest["format_version"] = 1;
    manifest["stage"] = model.stage;
    manifest["stage_beta"] = model.stage_beta;
    manifest["class_word_token"] = model.class_word_token;
    manifest["init_seed"] = std::to_string(model.init_seed);
    manifest["denoiser"] = denoiser_config_json(model.dcfg);
    manifest["encoder"] = encoder_config_json(model.ecfg);
    manifest["schedule"] = json{{"T", model.sched.T},
                                {"beta", model.sched.beta},
                                {"alpha_bar", model.sched.alpha_bar}};
    manifest["has_subject_encoder"] = model.se.has_value();
    manifest["vocab"] = Vocab::words();
    if (train_cfg) manifest["last_train"] = train_config_json(*train_cfg);
    json optj;
    optj["present"] = opt != nullptr;
    if (opt) {
        auto& adam = const_cast<StageOptimizer*>(opt)->adam;
        optj["step"] = adam.step_count();
        optj["beta1"] = adam.config().beta1;
        optj["beta2"] = adam.config().beta2;
        optj["eps"] = adam.config().eps;
        optj["param_names"] = opt->param_names;
        json lrs = json::array();
        for (auto& s : adam.slots()) lrs.push_back(s.lr);
        optj["lrs"] = lrs;
    }
    manifest["optimizer"] = optj;
    manifest["tensors"] = tensors;

    std::string mtext = manifest.dump();
    std::ofstream f(path, std::ios::binary);
    if (!f) throw IoError("cannot open '" + path + "' for writing");
    f << kCheckpointMagic << "\n" << mtext.size() << "\n" << mtext;
    for (const auto& [name, buf] : buffers)
        f.write(reinterpret_cast<const char*>(buf->data()),
                static_cast<std::streamsize>(buf->size() * sizeof(double)));
    if (!f) throw IoError("write failed for '" + path + "'");
}

LoadedCheckpoint load_checkpoint(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw IoError("cannot open '" + path + "'");
    std::string magic;
    if (!std::getline(f, magic) || magic != kCheckpointMagic)
        throw CheckpointError("'" + path + "' is not a checkpoint (bad magic)");
    std::string len_line;
    if (!std::getline(f, len_line)) throw CheckpointError("truncated manifest header");
    size_t mlen = 0;
    try {
        mlen = std::stoull(len_line);
    } catch (...) {
        throw CheckpointError("corrupt manifest length");
    }
    std::string mtext(mlen, '\0');
    f.read(mtext.data(), static_cast<std::streamsize>(mlen));
    if (!f) throw CheckpointError("truncated manifest");
    json manifest;
    try {
        manifest = json::parse(mtext);
    } catch (const std::exception& e) {
        throw CheckpointError(std::string("corrupt manifest json: ") + e.what());
    }
    if (manifest.at("format_version").get<int>() != 1)
        throw CheckpointError("unsupported checkpoint format version");
    if (manifest.at("vocab").get<std::vector<std::string>>() != Vocab::words())
        throw CheckpointError("checkpoint vocabulary does not match this build");

    std::string payload((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());

    // Offsets must tile the payload exactly.
    const json& tensors = manifest.at("tensors");
    uint64_t expected = 0;
    std::vector<std::pair<uint64_t, std::string>> order;
    for (auto it = tensors.begin(); it != tensors.end(); ++it)
        order.push_back({it.value().at("offset").get<uint64_t>(), it.key()});
    std::sort(order.begin(), order.end());
    for (const auto& [off, name] : order) {
        if (off != expected)
            throw CheckpointError("tensor table does not tile the payload at '" + name + "'");
        expected += tensors.at(name).at("bytes").get<uint64_t>();
    }
    if (expected != payload.size())
        throw CheckpointError("payload size " + std::to_string(payload.size()) +
                              " does not match tensor table total " + std::to_string(expected));

    LoadedCheckpoint out;
    NoiseSchedule sched;
    sched.T = manifest.at("schedule").at("T");
    sched.beta = manifest.at("schedule").at("beta").get<std::vector<double>>();
    sched.alpha_bar = manifest.at("schedule").at("alpha_bar").get<std::vector<double>>();
    uint64_t init_seed = std::stoull(manifest.at("init_seed").get<std::string>());
    out.model = Model::create(denoiser_config_from(manifest.at("denoiser")),
                              encoder_config_from(manifest.at("encoder")), sched, init_seed);
    if (manifest.at("has_subject_encoder").get<bool>()) out.model.attach_subject_encoder();
    out.model.stage = manifest.at("stage");
    out.model.stage_beta = manifest.at("stage_beta");
    out.model.class_word_token = manifest.at("class_word_token");

    auto read_buffer = [&](const std::string& name, std::vector<double>& dst) {
        const json& e = tensors.at(name);
        uint64_t off = e.at("offset"), bytes = e.at("bytes");
        if (bytes != dst.size() * sizeof(double))
            throw CheckpointError("tensor '" + name + "' has " + std::to_string(bytes) +
                                  " bytes, expected " + std::to_string(dst.size() * 8));
        std::memcpy(dst.data(), payload.data() + off, bytes);
    };

    ParamMap params = out.model.all_params();
    for (auto& [name, t] : params) {
        if (!tensors.contains(name))
            throw CheckpointError("checkpoint is missing tensor '" + name + "'");
        read_buffer(name, t.node()->data);
    }

    out.manifest = manifest;
    const json& optj = manifest.at("optimizer");
    out.has_optimizer = optj.at("present").get<bool>();
    if (out.has_optimizer) {
        out.optimizer_step = optj.at("step").get<int64_t>();
        for (const auto& name : optj.at("param_names").get<std::vector<std::string>>()) {
            uint64_t n = tensors.at("opt.m." + name).at("bytes").get<uint64_t>() / sizeof(double);
            out.opt_m[name].assign(n, 0.0);
            out.opt_v[name].assign(n, 0.0);
            read_buffer("opt.m." + name, out.opt_m[name]);
            read_buffer("opt.v." + name, out.opt_v[name]);
        }
    }
    if (manifest.contains("last_train")) {
        out.last_train = train_config_from_json(manifest.at("last_train"));
        out.has_train_config = true;
    }
    return out;
}

void restore_optimizer(StageOptimizer& opt, const LoadedCheckpoint& ckpt) {
    if (!ckpt.has_optimizer) throw CheckpointError("checkpoint has no optimizer state");
    auto& slots = opt.adam.slots();
    if (slots.size() != opt.param_names.size())
        throw ContractError("restore_optimizer: slot/name mismatch");
    for (size_t i = 0; i < slots.size(); ++i) {
        const auto& name = opt.param_names[i];
        auto mi = ckpt.opt_m.find(name);
        auto vi = ckpt.opt_v.find(name);
        if (mi == ckpt.opt_m.end() || vi == ckpt.opt_v.end())
            throw CheckpointError("optimizer state missing for '" + name + "'");
        if (mi->second.size() != slots[i].m.size())
            throw CheckpointError("optimizer state size mismatch for '" + name + "'");
        slots[i].m = mi->second;
        slots[i].v = vi->second;
    }
    opt.adam.set_step_count(ckpt.optimizer_step);
}

}  // namespace spritediff
