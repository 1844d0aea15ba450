#pragma once

// JSON interchange for Topology and RelayParams. nlohmann::json emits the
// shortest decimal that round-trips each double exactly.

#include <fstream>
#include <nlohmann/json.hpp>
#include <sstream>

#include "relaynet/topology.hpp"

namespace relaynet {

using json = nlohmann::ordered_json;

namespace detail {

inline json vec_to_json(const Vec& v) {
    json a = json::array();
    for (Eigen::Index i = 0; i < v.size(); ++i) a.push_back(v[i]);
    return a;
}

inline Vec vec_from_json(const json& a) {
    Vec v(a.size());
    for (std::size_t i = 0; i < a.size(); ++i) v[static_cast<Eigen::Index>(i)] = a[i].get<double>();
    return v;
}

inline json mat_to_json(const Mat& m) {
    json rows = json::array();
    for (Eigen::Index r = 0; r < m.rows(); ++r) rows.push_back(vec_to_json(m.row(r).transpose()));
    return rows;
}

inline Mat mat_from_json(const json& a, Eigen::Index cols_hint = 0) {
    const Eigen::Index rows = static_cast<Eigen::Index>(a.size());
    Eigen::Index cols = rows > 0 ? static_cast<Eigen::Index>(a[0].size()) : cols_hint;
    Mat m(rows, cols);
    for (Eigen::Index r = 0; r < rows; ++r) m.row(r) = vec_from_json(a[r]).transpose();
    return m;
}

}  // namespace detail

inline json to_json(const Topology& t) {
    json j;
    j["format"] = "relaynet-topology";
    j["layers"] = t.d();
    j["receivers"] = t.M;
    json layers = json::array();
    for (int i = 0; i < t.d(); ++i) {
        json layer;
        layer["n"] = t.layer_size(i);
        layer["h"] = detail::vec_to_json(t.h[i]);
        json fblocks = json::array();
        for (int l = 0; l < i; ++l) fblocks.push_back(detail::mat_to_json(t.F[i][l]));
        layer["F"] = fblocks;
        json gvecs = json::array();
        for (int m = 0; m < t.M; ++m) gvecs.push_back(detail::vec_to_json(t.g[i][m]));
        layer["g"] = gvecs;
        layers.push_back(layer);
    }
    j["layer_data"] = layers;
    if (t.direct.size() > 0) j["direct"] = detail::vec_to_json(t.direct);
    return j;
}

inline Topology topology_from_json(const json& j) {
    Topology t;
    t.M = j.at("receivers").get<int>();
    const int d = j.at("layers").get<int>();
    const auto& layers = j.at("layer_data");
    t.h.resize(d);
    t.F.resize(d);
    t.g.resize(d);
    for (int i = 0; i < d; ++i) {
        const auto& layer = layers.at(i);
        t.h[i] = detail::vec_from_json(layer.at("h"));
        t.F[i].resize(i);
        for (int l = 0; l < i; ++l)
            t.F[i][l] = detail::mat_from_json(layer.at("F").at(l),
                                              static_cast<Eigen::Index>(t.h[l].size()));
        t.g[i].resize(t.M);
        for (int m = 0; m < t.M; ++m) t.g[i][m] = detail::vec_from_json(layer.at("g").at(m));
    }
    if (j.contains("direct")) t.direct = detail::vec_from_json(j.at("direct"));
    t.validate();
    return t;
}

inline json to_json(const RelayParams& p) {
    json j;
    j["format"] = "relaynet-params";
    json w = json::array(), b = json::array();
    for (const auto& v : p.w) w.push_back(detail::vec_to_json(v));
    for (const auto& v : p.b) b.push_back(detail::vec_to_json(v));
    j["w"] = w;
    j["b"] = b;
    j["rx_w"] = detail::vec_to_json(p.rx_w);
    j["rx_b"] = detail::vec_to_json(p.rx_b);
    return j;
}

inline RelayParams params_from_json(const json& j) {
    RelayParams p;
    for (const auto& v : j.at("w")) p.w.push_back(detail::vec_from_json(v));
    for (const auto& v : j.at("b")) p.b.push_back(detail::vec_from_json(v));
    p.rx_w = detail::vec_from_json(j.at("rx_w"));
    p.rx_b = detail::vec_from_json(j.at("rx_b"));
    return p;
}

template <typename T>
void save_json(const T& obj, const std::string& path) {
    std::ofstream out(path);
    if (!out) throw config_error("cannot open for writing: " + path);
    out << to_json(obj).dump(2) << "\n";
}

inline json load_json(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw config_error("cannot open: " + path);
    return json::parse(in);
}

inline Topology load_topology(const std::string& path) { return topology_from_json(load_json(path)); }
inline RelayParams load_params(const std::string& path) { return params_from_json(load_json(path)); }

}  // namespace relaynet
