#pragma once

#include "sentrend/thread_graph.hpp"

#include <Eigen/Dense>

#include <cstdint>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace sentrend {

/// Which neighbors a node attends to. The node itself is always included.
enum class AttentionMode { Successors, Predecessors, Both };

std::string_view to_string(AttentionMode m);
AttentionMode attention_mode_from_string(std::string_view s);

struct GatConfig
{
    int layers = 2;          // hidden layers + the output layer
    int hidden_heads = 8;
    int hidden_dim = 8;      // per head
    int output_heads = 1;    // averaged
    int classes = 2;         // class 1 is "negative"
    double negative_slope = 0.2;
    double learning_rate = 1.0;  // first step length of the optimizer
    int max_epochs = 300;
    double tolerance = 1e-9;     // relative loss change
    AttentionMode mode = AttentionMode::Successors;
    std::uint64_t init_seed = 0;

    void validate() const;
};

struct GatHead
{
    Eigen::MatrixXd weight;     // out x in
    Eigen::VectorXd attention;  // 2*out: [source half, neighbor half]
};

struct GatLayer
{
    std::vector<GatHead> heads;
};

struct GatParams
{
    GatConfig config;
    int input_dim = 0;
    std::vector<GatLayer> layers;

    /// Glorot-uniform initialization from config.init_seed.
    static GatParams initialize(const GatConfig& config, int input_dim);
    /// Same shapes as `like`, all zeros.
    static GatParams zeros_like(const GatParams& like);

    Eigen::Index parameter_count() const;
    Eigen::VectorXd flatten() const;
    void assign(const Eigen::VectorXd& flat);

    std::string to_json() const;
    static GatParams from_json(std::string_view text);
};

/// Per-node attention lists in CSR form, self first, then neighbors in
/// ascending appearance order.
struct AttentionNeighborhood
{
    std::vector<std::size_t> offsets;
    std::vector<NodeIndex> members;

    static AttentionNeighborhood build(const MessageGraph& graph, AttentionMode mode);
    std::size_t node_count() const { return offsets.empty() ? 0 : offsets.size() - 1; }
};

enum class ProbSource { Gat, Upstream, Stacked };

struct SentimentProbs
{
    std::vector<std::string> msg_ids;
    std::vector<double> p_negative;
    ProbSource source = ProbSource::Gat;
};

struct GatForwardResult
{
    Eigen::MatrixXd logits;          // n x classes
    std::vector<double> p_negative;  // softmax mass of class 1
    /// attention[layer][head][k] aligned with AttentionNeighborhood::members
    std::vector<std::vector<std::vector<double>>> attention;
};

GatForwardResult gat_forward_detailed(const GatParams& params, const MessageGraph& graph,
                                      const Eigen::MatrixXd& features);

SentimentProbs gat_forward(const GatParams& params, const MessageGraph& graph, const Eigen::MatrixXd& features);

struct GatLossGradient
{
    double loss = 0.0;  // mean cross-entropy over masked nodes
    GatParams gradient;
};

/// Reverse-mode gradient of the masked mean cross-entropy.
/// labels[i] = 1 marks node i negative; mask[i] != 0 includes it in the loss.
GatLossGradient gat_gradient(const GatParams& params, const MessageGraph& graph, const Eigen::MatrixXd& features,
                             std::span<const std::uint8_t> labels, std::span<const std::uint8_t> mask);

struct GatTrainResult
{
    GatParams params;
    double final_loss = 0.0;
    int epochs = 0;
    bool converged = false;
    std::vector<double> loss_history;  // non-increasing
};

/// Full-batch L-BFGS with backtracking from a Glorot initialization.
GatTrainResult gat_train(const GatConfig& config, const MessageGraph& graph, const Eigen::MatrixXd& features,
                         std::span<const std::uint8_t> labels, std::span<const std::uint8_t> mask);

} // namespace sentrend
