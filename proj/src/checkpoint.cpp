#include "mpccbf/checkpoint.hpp"

#include <fstream>
#include <sstream>

#include "json.hpp"

namespace mpccbf {
namespace {

using nlohmann::ordered_json;

ordered_json ranges_json(const ObsRanges& r) {
  return {{"x", {r.x_min, r.x_max}},       {"y", {r.y_min, r.y_max}}, {"psi", {r.psi_min, r.psi_max}},
          {"v", {r.v_min, r.v_max}},       {"u", {r.u_min, r.u_max}}, {"phi", {r.phi_min, r.phi_max}}};
}

ObsRanges ranges_from(const ordered_json& j) {
  ObsRanges r;
  auto pair = [&](const char* k, double& lo, double& hi) {
    lo = j.at(k).at(0).get<double>();
    hi = j.at(k).at(1).get<double>();
  };
  pair("x", r.x_min, r.x_max);
  pair("y", r.y_min, r.y_max);
  pair("psi", r.psi_min, r.psi_max);
  pair("v", r.v_min, r.v_max);
  pair("u", r.u_min, r.u_max);
  pair("phi", r.phi_min, r.phi_max);
  return r;
}

}  // namespace

std::string checkpoint_to_string(const PolicyCheckpoint& ck) {
  const Mlp& net = ck.policy.net;
  ordered_json layers = ordered_json::array();
  for (int l = 0; l < net.num_layers(); ++l) {
    const Eigen::MatrixXd& W = net.weight(l);
    std::vector<double> w;
    w.reserve(static_cast<std::size_t>(W.size()));
    for (int i = 0; i < W.rows(); ++i)
      for (int k = 0; k < W.cols(); ++k) w.push_back(W(i, k));
    const Eigen::VectorXd& b = net.bias(l);
    layers.push_back({{"rows", W.rows()},
                      {"cols", W.cols()},
                      {"weight", w},
                      {"bias", std::vector<double>(b.data(), b.data() + b.size())}});
  }
  ordered_json j;
  j["version"] = ck.version;
  j["config_hash"] = ck.config_hash;
  j["layer_sizes"] = net.sizes();
  j["act_dim"] = ck.policy.act_dim();
  j["log_std_bounds"] = {ck.policy.log_std_min(), ck.policy.log_std_max()};
  j["obs_ranges"] = ranges_json(ck.ranges);
  j["theta_lower"] = ck.bounds.lower;
  j["theta_upper"] = ck.bounds.upper;
  j["layers"] = layers;
  return j.dump(1);
}

PolicyCheckpoint checkpoint_from_string(const std::string& text) {
  ordered_json j;
  try {
    j = ordered_json::parse(text);
  } catch (const nlohmann::json::parse_error& e) {
    throw CheckpointError(std::string("checkpoint is not valid JSON: ") + e.what());
  }
  try {
    PolicyCheckpoint ck;
    ck.version = j.at("version").get<int>();
    if (ck.version != kCheckpointVersion)
      throw CheckpointError("checkpoint version " + std::to_string(ck.version) + " is not supported (expected " +
                            std::to_string(kCheckpointVersion) + ")");
    ck.config_hash = j.at("config_hash").get<std::string>();
    const auto sizes = j.at("layer_sizes").get<std::vector<int>>();
    const int act_dim = j.at("act_dim").get<int>();
    if (sizes.size() < 2 || sizes.back() != 2 * act_dim) throw CheckpointError("checkpoint layer sizes are inconsistent");
    const std::vector<int> hidden(sizes.begin() + 1, sizes.end() - 1);
    ck.policy = GaussianPolicy(sizes.front(), act_dim, hidden, j.at("log_std_bounds").at(0).get<double>(),
                               j.at("log_std_bounds").at(1).get<double>());
    const auto& layers = j.at("layers");
    if (static_cast<int>(layers.size()) != ck.policy.net.num_layers())
      throw CheckpointError("checkpoint layer count does not match its sizes");
    for (int l = 0; l < ck.policy.net.num_layers(); ++l) {
      Eigen::MatrixXd& W = ck.policy.net.weight(l);
      Eigen::VectorXd& b = ck.policy.net.bias(l);
      const auto w = layers[l].at("weight").get<std::vector<double>>();
      const auto bb = layers[l].at("bias").get<std::vector<double>>();
      if (layers[l].at("rows").get<int>() != W.rows() || layers[l].at("cols").get<int>() != W.cols() ||
          static_cast<Eigen::Index>(w.size()) != W.size() || static_cast<Eigen::Index>(bb.size()) != b.size())
        throw CheckpointError("checkpoint layer " + std::to_string(l) + " has the wrong shape");
      std::size_t k = 0;
      for (int i = 0; i < W.rows(); ++i)
        for (int c = 0; c < W.cols(); ++c) W(i, c) = w[k++];
      for (int i = 0; i < b.size(); ++i) b[i] = bb[static_cast<std::size_t>(i)];
    }
    ck.ranges = ranges_from(j.at("obs_ranges"));
    ck.bounds.lower = j.at("theta_lower").get<std::array<double, ControllerTheta::kSize>>();
    ck.bounds.upper = j.at("theta_upper").get<std::array<double, ControllerTheta::kSize>>();
    ck.ranges.validate();
    ck.bounds.validate();
    return ck;
  } catch (const nlohmann::json::exception& e) {
    throw CheckpointError(std::string("checkpoint is malformed: ") + e.what());
  } catch (const ValidationError& e) {
    throw CheckpointError(std::string("checkpoint is invalid: ") + e.what());
  } catch (const ShapeMismatch& e) {
    throw CheckpointError(std::string("checkpoint is invalid: ") + e.what());
  }
}

void save_checkpoint(const std::string& path, const PolicyCheckpoint& ck) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw CheckpointError("cannot write checkpoint " + path);
  out << checkpoint_to_string(ck) << '\n';
  if (!out) throw CheckpointError("failed writing checkpoint " + path);
}

PolicyCheckpoint load_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw CheckpointError("cannot read checkpoint " + path);
  std::ostringstream ss;
  ss << in.rdbuf();
  return checkpoint_from_string(ss.str());
}

}  // namespace mpccbf
