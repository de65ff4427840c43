// Region trees whose sensors measure population-weighted averages of leaf states.
#pragma once

#include "fusereg/common.hpp"

#include <cstddef>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

namespace fusereg {

class SensorHierarchy {
public:
    using NodeId = std::size_t;

    struct Node {
        std::string name;
        std::optional<double> population;  // required on leaves; internal nodes default to the sum
        std::vector<NodeId> children;
        std::optional<NodeId> parent;
    };

    struct Attachment {
        NodeId node;
        std::string sensor_id;
    };

    NodeId add_root(std::string name, std::optional<double> population = std::nullopt);
    NodeId add_child(NodeId parent, std::string name, std::optional<double> population = std::nullopt);
    /// Sensors become rows of H in attachment order.
    void attach_sensor(NodeId node, std::string sensor_id);

    const std::vector<Node>& nodes() const { return nodes_; }
    const std::vector<Attachment>& attachments() const { return attachments_; }
    std::optional<NodeId> root() const { return nodes_.empty() ? std::nullopt : std::optional<NodeId>(0); }

    /// Leaves in depth-first order; leaf i is state i.
    std::vector<NodeId> leaves() const;
    /// Sum of leaf populations under `node`.
    double population(NodeId node) const;
    std::optional<NodeId> find(const std::string& name) const;

    /// Throws InvalidHierarchy on a non-positive leaf population or an internal population
    /// that differs from the sum of its children.
    void validate() const;

    /// Reorders attachments so that sensor ids follow `order`; every id must appear exactly once.
    void reorder_sensors(const std::vector<std::string>& order);

private:
    void leaves_under(NodeId node, std::vector<NodeId>& out) const;

    std::vector<Node> nodes_;
    std::vector<Attachment> attachments_;
};

/// d x k map: the row for a sensor on node n weights each leaf under n by pop(leaf) / pop(n).
MatrixXd build_measurement_map(const SensorHierarchy& hier);

/// Parses {name, population, children: [...], sensors: [...]} with an optional top-level
/// "sensor_order" array. Without it, sensors are taken in depth-first declaration order.
SensorHierarchy hierarchy_from_json(const std::string& text);
SensorHierarchy load_hierarchy(const std::filesystem::path& path);
std::string hierarchy_to_json(const SensorHierarchy& hier);

/// Five equal-population states; region A = states 1-3, region B = states 4-5; one sensor on
/// every state, then one per region, then one national.
SensorHierarchy five_state_hierarchy();

} // namespace fusereg
