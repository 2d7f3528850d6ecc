#include "babynet/checkpoint.hpp"

#include <cmath>
#include <fstream>

#include <json.hpp>

#include "babynet/tensor_io.hpp"

namespace babynet {

using nlohmann::json;

TargetScaler TargetScaler::fit(const std::vector<double>& values) {
    if (values.empty()) throw ValueError("TargetScaler: cannot fit on an empty set");
    double mean = 0.0;
    for (double v : values) mean += v;
    mean /= static_cast<double>(values.size());
    double var = 0.0;
    for (double v : values) var += (v - mean) * (v - mean);
    var /= static_cast<double>(values.size());
    double sd = std::sqrt(var);
    // Degenerate folds (a single patient) fall back to unit scale.
    if (sd < 1e-9) sd = 1.0;
    return {mean, sd};
}

namespace {

std::string file_for(const std::string& name) {
    std::string f = name;
    for (char& c : f)
        if (c == '.') c = '_';
    return f + ".bnt";
}

json config_to_json(const ModelConfig& c) {
    return json{{"variant", variant_name(c.variant)},
                {"in_frames", c.in_frames},
                {"in_height", c.in_height},
                {"in_width", c.in_width},
                {"num_heads", c.num_heads},
                {"width_multiplier", c.width_multiplier},
                {"base_widths", c.base_widths}};
}

ModelConfig config_from_json(const json& j) {
    ModelConfig c;
    c.variant = variant_from_name(j.at("variant").get<std::string>());
    c.in_frames = j.at("in_frames").get<int>();
    c.in_height = j.at("in_height").get<int>();
    c.in_width = j.at("in_width").get<int>();
    c.num_heads = j.at("num_heads").get<int>();
    c.width_multiplier = j.at("width_multiplier").get<double>();
    auto widths = j.at("base_widths").get<std::vector<int>>();
    if (widths.size() != 5) throw IoError("checkpoint manifest: base_widths must have 5 entries");
    std::copy(widths.begin(), widths.end(), c.base_widths.begin());
    return c;
}

}  // namespace

void save_checkpoint(const std::filesystem::path& dir, Model& model, const TargetScaler& scaler) {
    std::filesystem::create_directories(dir);
    json params = json::object();
    visit_parameters(model, [&](const std::string& name, Tensor& t) {
        std::string file = file_for(name);
        write_tensor_file(dir / file, t);
        params[name] = file;
    });
    json buffers = json::object();
    visit_bn_states(model, [&](const std::string& name, ops::BatchNormState& state) {
        if (!state.initialized) return;
        int c = static_cast<int>(state.running_mean.size());
        std::string mfile = file_for(name + ".running_mean");
        std::string vfile = file_for(name + ".running_var");
        write_tensor_file(dir / mfile, Tensor::from_data({c}, state.running_mean));
        write_tensor_file(dir / vfile, Tensor::from_data({c}, state.running_var));
        buffers[name + ".running_mean"] = mfile;
        buffers[name + ".running_var"] = vfile;
    });
    json manifest{{"format", "babynet-checkpoint-v1"},
                  {"config", config_to_json(model.config)},
                  {"init", "fan-in uniform (conv/linear), normal(0,0.02) positional"},
                  {"target_scaler", {{"mean", scaler.mean}, {"stddev", scaler.stddev}}},
                  {"params", params},
                  {"buffers", buffers}};
    std::ofstream out(dir / "manifest.json");
    if (!out) throw IoError("cannot write checkpoint manifest in " + dir.string());
    out << manifest.dump(2) << '\n';
}

Checkpoint load_checkpoint(const std::filesystem::path& dir) {
    std::ifstream in(dir / "manifest.json");
    if (!in) throw IoError("cannot open checkpoint manifest: " + (dir / "manifest.json").string());
    json manifest;
    try {
        in >> manifest;
    } catch (const json::exception& e) {
        throw IoError("malformed checkpoint manifest in " + dir.string() + ": " + e.what());
    }

    Checkpoint ck;
    ck.model = build_model(config_from_json(manifest.at("config")), 0);
    ck.scaler.mean = manifest.at("target_scaler").at("mean").get<double>();
    ck.scaler.stddev = manifest.at("target_scaler").at("stddev").get<double>();

    const json& params = manifest.at("params");
    visit_parameters(ck.model, [&](const std::string& name, Tensor& t) {
        if (!params.contains(name))
            throw IoError("checkpoint manifest missing parameter '" + name + "'");
        Tensor loaded = read_tensor_file(dir / params.at(name).get<std::string>());
        if (loaded.shape() != t.shape())
            throw IoError("checkpoint parameter '" + name + "' has shape " +
                          shape_str(loaded.shape()) + ", expected " + shape_str(t.shape()));
        std::copy(loaded.data().begin(), loaded.data().end(), t.data().begin());
    });

    const json& buffers = manifest.at("buffers");
    visit_bn_states(ck.model, [&](const std::string& name, ops::BatchNormState& state) {
        std::string mkey = name + ".running_mean";
        std::string vkey = name + ".running_var";
        if (!buffers.contains(mkey)) return;  // layer was never trained
        Tensor mean = read_tensor_file(dir / buffers.at(mkey).get<std::string>());
        Tensor var = read_tensor_file(dir / buffers.at(vkey).get<std::string>());
        state.running_mean.assign(mean.data().begin(), mean.data().end());
        state.running_var.assign(var.data().begin(), var.data().end());
        state.initialized = true;
    });
    return ck;
}

}  // namespace babynet
