#pragma once

#include <Eigen/Dense>

#include <filesystem>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

namespace sentrend {

using FloatRows = Eigen::Matrix<float, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

/// Message embeddings, one row per message id.
///
/// On disk: "EMB1", uint32 LE row count, uint32 LE dimension, then row-major
/// float32 LE values. Row order is given by a newline-delimited id manifest.
class EmbeddingMatrix
{
public:
    EmbeddingMatrix() = default;
    EmbeddingMatrix(FloatRows values, std::vector<std::string> ids);

    Eigen::Index rows() const { return values_.rows(); }
    Eigen::Index dimension() const { return values_.cols(); }
    const FloatRows& values() const { return values_; }
    const std::vector<std::string>& ids() const { return ids_; }

    /// Rows for `ids` in the given order, widened to double.
    Eigen::MatrixXd gather(const std::vector<std::string>& ids) const;

    std::string encode() const;
    std::string manifest_text() const;

    static EmbeddingMatrix decode(std::string_view bytes, std::string_view manifest);
    static EmbeddingMatrix load(const std::filesystem::path& emb, const std::filesystem::path& manifest);

private:
    FloatRows values_;
    std::vector<std::string> ids_;
    std::unordered_map<std::string, Eigen::Index> index_;
};

} // namespace sentrend
