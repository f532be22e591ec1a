#include "sctdet/checkpoint.hpp"

#include <fstream>
#include <sstream>

#include "json.hpp"

namespace sctdet {

using nlohmann::json;

namespace {

json matrix_to_json(const Matrix& m) {
    return json{{"rows", m.rows}, {"cols", m.cols}, {"data", m.data}};
}

Matrix matrix_from_json(const json& j, int want_rows, int want_cols, const std::string& name) {
    Matrix m(j.at("rows").get<int>(), j.at("cols").get<int>());
    if (m.rows != want_rows || m.cols != want_cols)
        throw ConfigError("checkpoint: " + name + " has shape " + std::to_string(m.rows) + "x" +
                          std::to_string(m.cols) + ", expected " + std::to_string(want_rows) +
                          "x" + std::to_string(want_cols));
    const auto& data = j.at("data");
    if (data.size() != m.data.size())
        throw ConfigError("checkpoint: " + name + " data length does not match its shape");
    m.data = data.get<std::vector<double>>();
    ensure_finite(m, "checkpoint load");
    return m;
}

json linear_to_json(const LinearMap& l) {
    return json{{"in_dim", l.in_dim},
                {"out_dim", l.out_dim},
                {"residual", l.residual},
                {"weight", matrix_to_json(l.weight)},
                {"bias", matrix_to_json(l.bias)}};
}

LinearMap linear_from_json(const json& j, int want_in, int want_out, const std::string& name) {
    LinearMap l;
    l.in_dim = j.at("in_dim").get<int>();
    l.out_dim = j.at("out_dim").get<int>();
    l.residual = j.at("residual").get<bool>();
    if (l.in_dim != want_in || l.out_dim != want_out)
        throw ConfigError("checkpoint: " + name + " maps " + std::to_string(l.in_dim) + "->" +
                          std::to_string(l.out_dim) + ", expected " + std::to_string(want_in) +
                          "->" + std::to_string(want_out));
    if (l.residual && l.in_dim != l.out_dim)
        throw ConfigError("checkpoint: " + name + " is residual but not square");
    l.weight = matrix_from_json(j.at("weight"), l.in_dim, l.out_dim, name + ".weight");
    l.bias = matrix_from_json(j.at("bias"), 1, l.out_dim, name + ".bias");
    return l;
}

json detector_config_to_json(const DetectorConfig& cfg) {
    return json{{"scale_grid_sizes", cfg.anchors.scale_grid_sizes},
                {"aspect_ratios", cfg.anchors.aspect_ratios},
                {"box_size_min", cfg.anchors.box_size_min},
                {"box_size_max", cfg.anchors.box_size_max},
                {"image_side", cfg.image_side},
                {"num_source_classes", cfg.num_source_classes},
                {"feature_channels", cfg.feature_channels}};
}

DetectorConfig detector_config_from_json(const json& j) {
    DetectorConfig cfg;
    cfg.anchors.scale_grid_sizes = j.at("scale_grid_sizes").get<std::vector<int>>();
    cfg.anchors.aspect_ratios = j.at("aspect_ratios").get<std::vector<double>>();
    cfg.anchors.box_size_min = j.at("box_size_min").get<double>();
    cfg.anchors.box_size_max = j.at("box_size_max").get<double>();
    cfg.image_side = j.at("image_side").get<int>();
    cfg.num_source_classes = j.at("num_source_classes").get<int>();
    cfg.feature_channels = j.at("feature_channels").get<std::vector<int>>();
    cfg.validate();
    return cfg;
}

json sct_to_json(const SctParams& p) {
    return json{{"psi_alpha", linear_to_json(p.psi_alpha)},
                {"psi_beta", linear_to_json(p.psi_beta)},
                {"psi_gamma", linear_to_json(p.psi_gamma)},
                {"psi_rho", linear_to_json(p.psi_rho)},
                {"psi_eta", linear_to_json(p.psi_eta)},
                {"psi_xi", linear_to_json(p.psi_xi)},
                {"theta", matrix_to_json(p.theta)},
                {"lambda", p.lambda},
                {"tau", p.tau}};
}

SctParams sct_from_json(const json& j) {
    SctParams p;
    const json& alpha = j.at("psi_alpha");
    const int d_f = alpha.at("in_dim").get<int>();
    const json& beta = j.at("psi_beta");
    const int c_s = beta.at("out_dim").get<int>();
    const json& theta = j.at("theta");
    const int c_t = theta.at("cols").get<int>();

    p.psi_alpha = linear_from_json(alpha, d_f, d_f, "psi_alpha");
    p.psi_beta = linear_from_json(beta, d_f, c_s, "psi_beta");
    p.psi_gamma = linear_from_json(j.at("psi_gamma"), c_s, c_s, "psi_gamma");
    p.psi_rho = linear_from_json(j.at("psi_rho"), c_s, c_s, "psi_rho");
    p.psi_eta = linear_from_json(j.at("psi_eta"), c_s, c_s, "psi_eta");
    p.psi_xi = linear_from_json(j.at("psi_xi"), c_s, c_s, "psi_xi");
    p.theta = matrix_from_json(theta, c_s, c_t, "theta");
    p.lambda = j.at("lambda").get<double>();
    p.tau = j.at("tau").get<double>();
    if (p.lambda < 0.0 || p.tau < 0.0)
        throw ConfigError("checkpoint: lambda and tau must be nonnegative");
    return p;
}

json sct_cfg_to_json(const SctConfig& cfg) {
    return json{{"pool_kernels", cfg.pool_kernels},
                {"feature_scales", cfg.feature_scales},
                {"use_gap", cfg.use_gap}};
}

SctConfig sct_cfg_from_json(const json& j) {
    SctConfig cfg;
    cfg.pool_kernels = j.at("pool_kernels").get<std::vector<int>>();
    cfg.feature_scales = j.at("feature_scales").get<std::vector<int>>();
    cfg.use_gap = j.at("use_gap").get<bool>();
    return cfg;
}

}  // namespace

std::string checkpoint_bytes(const DetectorModel& model, const SctParams* sct,
                             const SctConfig* sct_cfg) {
    json j;
    j["format"] = "sctdet-checkpoint-v1";
    j["config"] = detector_config_to_json(model.cfg);
    json backbone = json::array(), class_heads = json::array(), reg_heads = json::array();
    for (const LinearMap& l : model.backbone) backbone.push_back(linear_to_json(l));
    for (const LinearMap& l : model.class_heads) class_heads.push_back(linear_to_json(l));
    for (const LinearMap& l : model.reg_heads) reg_heads.push_back(linear_to_json(l));
    j["backbone"] = backbone;
    j["class_heads"] = class_heads;
    j["reg_heads"] = reg_heads;
    if (sct) j["sct"] = sct_to_json(*sct);
    if (sct_cfg) j["sct_config"] = sct_cfg_to_json(*sct_cfg);
    return j.dump(2) + "\n";
}

void save_checkpoint(const std::string& path, const DetectorModel& model, const SctParams* sct,
                     const SctConfig* sct_cfg) {
    std::ofstream f(path);
    if (!f) throw ConfigError("cannot write checkpoint " + path);
    f << checkpoint_bytes(model, sct, sct_cfg);
}

Checkpoint load_checkpoint(const std::string& path) {
    std::ifstream f(path);
    if (!f) throw ConfigError("cannot read checkpoint " + path);
    json j;
    try {
        f >> j;
    } catch (const json::exception& e) {
        throw ConfigError("checkpoint " + path + " is not valid JSON: " + e.what());
    }
    try {
        if (j.at("format").get<std::string>() != "sctdet-checkpoint-v1")
            throw ConfigError("checkpoint " + path + ": unknown format tag");
        Checkpoint ck;
        ck.model.cfg = detector_config_from_json(j.at("config"));
        const DetectorConfig& cfg = ck.model.cfg;
        const int n_ratios = static_cast<int>(cfg.anchors.aspect_ratios.size());
        const size_t n_scales = cfg.anchors.scale_grid_sizes.size();
        const json &bb = j.at("backbone"), &ch = j.at("class_heads"), &rh = j.at("reg_heads");
        if (bb.size() != n_scales || ch.size() != n_scales || rh.size() != n_scales)
            throw ConfigError("checkpoint: layer count does not match the scale count");
        for (size_t k = 0; k < n_scales; ++k) {
            const int ps = cfg.patch_size(static_cast<int>(k));
            const int ck_ = cfg.feature_channels[k];
            ck.model.backbone.push_back(
                linear_from_json(bb[k], ps * ps, ck_, "backbone[" + std::to_string(k) + "]"));
            ck.model.class_heads.push_back(
                linear_from_json(ch[k], ck_, n_ratios * (cfg.num_source_classes + 1),
                                 "class_heads[" + std::to_string(k) + "]"));
            ck.model.reg_heads.push_back(
                linear_from_json(rh[k], ck_, n_ratios * 4, "reg_heads[" + std::to_string(k) + "]"));
        }
        if (j.contains("sct")) {
            ck.sct = sct_from_json(j.at("sct"));
            if (ck.sct->psi_beta.out_dim != cfg.num_source_classes)
                throw ConfigError("checkpoint: transformer C_s does not match the detector");
        }
        if (j.contains("sct_config")) {
            ck.sct_cfg = sct_cfg_from_json(j.at("sct_config"));
            if (ck.sct_cfg->pool_kernels.size() != n_scales)
                throw ConfigError("checkpoint: pool kernel count does not match the scale count");
        }
        return ck;
    } catch (const json::exception& e) {
        throw ConfigError("checkpoint " + path + ": " + e.what());
    }
}

}  // namespace sctdet
