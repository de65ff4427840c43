#include "fusereg/hierarchy.hpp"

#include <json.hpp>

#include <algorithm>
#include <cmath>
#include <fstream>
#include <functional>
#include <map>
#include <sstream>

namespace fusereg {

using json = nlohmann::json;

SensorHierarchy::NodeId SensorHierarchy::add_root(std::string name, std::optional<double> population) {
    if (!nodes_.empty()) throw InvalidHierarchy("hierarchy already has a root");
    nodes_.push_back(Node{std::move(name), population, {}, std::nullopt});
    return 0;
}

SensorHierarchy::NodeId SensorHierarchy::add_child(NodeId parent, std::string name, std::optional<double> population) {
    if (parent >= nodes_.size()) throw InvalidHierarchy("unknown parent node");
    const NodeId id = nodes_.size();
    nodes_.push_back(Node{std::move(name), population, {}, parent});
    nodes_[parent].children.push_back(id);
    return id;
}

void SensorHierarchy::attach_sensor(NodeId node, std::string sensor_id) {
    if (node >= nodes_.size()) throw InvalidHierarchy("cannot attach sensor to unknown node");
    attachments_.push_back(Attachment{node, std::move(sensor_id)});
}

void SensorHierarchy::leaves_under(NodeId node, std::vector<NodeId>& out) const {
    const Node& n = nodes_[node];
    if (n.children.empty()) {
        out.push_back(node);
        return;
    }
    for (NodeId c : n.children) leaves_under(c, out);
}

std::vector<SensorHierarchy::NodeId> SensorHierarchy::leaves() const {
    std::vector<NodeId> out;
    if (!nodes_.empty()) leaves_under(0, out);
    return out;
}

double SensorHierarchy::population(NodeId node) const {
    std::vector<NodeId> under;
    leaves_under(node, under);
    double total = 0.0;
    for (NodeId leaf : under) total += nodes_[leaf].population.value_or(0.0);
    return total;
}

std::optional<SensorHierarchy::NodeId> SensorHierarchy::find(const std::string& name) const {
    for (NodeId i = 0; i < nodes_.size(); ++i)
        if (nodes_[i].name == name) return i;
    return std::nullopt;
}

void SensorHierarchy::validate() const {
    if (nodes_.empty()) throw EmptyHierarchy("hierarchy has no nodes");
    for (const Node& n : nodes_) {
        if (n.children.empty()) {
            if (!n.population || !(*n.population > 0.0) || !std::isfinite(*n.population))
                throw InvalidHierarchy("leaf '" + n.name + "' needs a positive population");
        }
    }
    for (NodeId i = 0; i < nodes_.size(); ++i) {
        const Node& n = nodes_[i];
        if (n.children.empty() || !n.population) continue;
        double sum = 0.0;
        for (NodeId c : n.children) sum += population(c);
        if (std::abs(*n.population - sum) > 1e-9 * std::max(1.0, std::abs(sum)))
            throw InvalidHierarchy("population of '" + n.name + "' differs from the sum of its children");
    }
}

void SensorHierarchy::reorder_sensors(const std::vector<std::string>& order) {
    if (order.size() != attachments_.size())
        throw InvalidHierarchy("sensor_order must list every sensor exactly once");
    std::vector<Attachment> reordered;
    reordered.reserve(order.size());
    for (const auto& id : order) {
        auto it = std::find_if(attachments_.begin(), attachments_.end(),
                               [&](const Attachment& a) { return a.sensor_id == id; });
        if (it == attachments_.end()) throw InvalidHierarchy("sensor_order names unknown sensor '" + id + "'");
        if (std::any_of(reordered.begin(), reordered.end(), [&](const Attachment& a) { return a.sensor_id == id; }))
            throw InvalidHierarchy("sensor_order repeats sensor '" + id + "'");
        reordered.push_back(*it);
    }
    attachments_ = std::move(reordered);
}

MatrixXd build_measurement_map(const SensorHierarchy& hier) {
    const auto leaves = hier.leaves();
    if (leaves.empty()) throw EmptyHierarchy("hierarchy has no leaves");
    if (hier.attachments().empty()) throw NoSensors("hierarchy has no sensor attachments");
    hier.validate();

    std::map<SensorHierarchy::NodeId, Index> column;
    for (std::size_t i = 0; i < leaves.size(); ++i) column[leaves[i]] = static_cast<Index>(i);

    const auto d = static_cast<Index>(hier.attachments().size());
    MatrixXd H = MatrixXd::Zero(d, static_cast<Index>(leaves.size()));
    for (Index r = 0; r < d; ++r) {
        const auto node = hier.attachments()[static_cast<std::size_t>(r)].node;
        std::vector<SensorHierarchy::NodeId> under;
        // leaves() is depth-first from the root, so filter it to keep column order.
        for (auto leaf : leaves) {
            for (std::optional<SensorHierarchy::NodeId> p = leaf; p; p = hier.nodes()[*p].parent) {
                if (*p == node) {
                    under.push_back(leaf);
                    break;
                }
            }
        }
        const double total = hier.population(node);
        for (auto leaf : under) H(r, column[leaf]) = *hier.nodes()[leaf].population / total;
    }
    return H;
}

namespace {

void parse_node(const json& j, SensorHierarchy& hier, std::optional<SensorHierarchy::NodeId> parent) {
    if (!j.is_object() || !j.contains("name")) throw SchemaError("hierarchy node needs an object with 'name'");
    std::optional<double> pop;
    if (j.contains("population") && !j["population"].is_null()) pop = j["population"].get<double>();
    const std::string name = j["name"].get<std::string>();
    const auto id = parent ? hier.add_child(*parent, name, pop) : hier.add_root(name, pop);
    if (j.contains("sensors"))
        for (const auto& s : j["sensors"]) hier.attach_sensor(id, s.get<std::string>());
    if (j.contains("children"))
        for (const auto& c : j["children"]) parse_node(c, hier, id);
}

json node_to_json(const SensorHierarchy& hier, SensorHierarchy::NodeId id) {
    const auto& n = hier.nodes()[id];
    json j;
    j["name"] = n.name;
    j["population"] = hier.population(id);
    json sensors = json::array();
    for (const auto& a : hier.attachments())
        if (a.node == id) sensors.push_back(a.sensor_id);
    j["sensors"] = sensors;
    json children = json::array();
    for (auto c : n.children) children.push_back(node_to_json(hier, c));
    j["children"] = children;
    return j;
}

} // namespace

SensorHierarchy hierarchy_from_json(const std::string& text) {
    json j;
    try {
        j = json::parse(text);
    } catch (const json::parse_error& e) {
        throw SchemaError(std::string("hierarchy JSON: ") + e.what());
    }
    SensorHierarchy hier;
    try {
        parse_node(j, hier, std::nullopt);
        if (j.contains("sensor_order")) hier.reorder_sensors(j["sensor_order"].get<std::vector<std::string>>());
    } catch (const json::exception& e) {
        throw SchemaError(std::string("hierarchy JSON: ") + e.what());
    }
    hier.validate();
    return hier;
}

SensorHierarchy load_hierarchy(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open hierarchy file " + path.string());
    std::stringstream ss;
    ss << in.rdbuf();
    return hierarchy_from_json(ss.str());
}

std::string hierarchy_to_json(const SensorHierarchy& hier) {
    if (!hier.root()) throw EmptyHierarchy("hierarchy has no nodes");
    json j = node_to_json(hier, *hier.root());
    json order = json::array();
    for (const auto& a : hier.attachments()) order.push_back(a.sensor_id);
    j["sensor_order"] = order;
    return j.dump(2);
}

SensorHierarchy five_state_hierarchy() {
    SensorHierarchy hier;
    const auto nation = hier.add_root("national");
    const auto region_a = hier.add_child(nation, "region-A");
    const auto region_b = hier.add_child(nation, "region-B");
    std::vector<SensorHierarchy::NodeId> states;
    for (int i = 1; i <= 5; ++i)
        states.push_back(hier.add_child(i <= 3 ? region_a : region_b, "state-" + std::to_string(i), 1.0));
    for (int i = 1; i <= 5; ++i) hier.attach_sensor(states[static_cast<std::size_t>(i - 1)], "z" + std::to_string(i));
    hier.attach_sensor(region_a, "z6");
    hier.attach_sensor(region_b, "z7");
    hier.attach_sensor(nation, "z8");
    return hier;
}

} // namespace fusereg
