#include "sentrend/embeddings.hpp"

#include "sentrend/io.hpp"

#include <bit>
#include <cstdint>
#include <cstring>

namespace sentrend {

namespace {

void put_u32(std::string& out, std::uint32_t v)
{
    for (int i = 0; i < 4; ++i)
        out += static_cast<char>((v >> (8 * i)) & 0xffU);
}

std::uint32_t get_u32(std::string_view bytes, std::size_t at)
{
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i)
        v |= static_cast<std::uint32_t>(static_cast<unsigned char>(bytes[at + i])) << (8 * i);
    return v;
}

} // namespace

EmbeddingMatrix::EmbeddingMatrix(FloatRows values, std::vector<std::string> ids)
    : values_(std::move(values)), ids_(std::move(ids))
{
    if (static_cast<Eigen::Index>(ids_.size()) != values_.rows())
        throw ValidationError("embedding manifest has " + std::to_string(ids_.size()) + " ids for "
                              + std::to_string(values_.rows()) + " rows");
    if (!values_.allFinite())
        throw ValidationError("embeddings contain NaN or Inf");
    index_.reserve(ids_.size());
    for (std::size_t i = 0; i < ids_.size(); ++i)
        if (!index_.emplace(ids_[i], static_cast<Eigen::Index>(i)).second)
            throw ValidationError("duplicate id in embedding manifest: " + ids_[i]);
}

Eigen::MatrixXd EmbeddingMatrix::gather(const std::vector<std::string>& ids) const
{
    Eigen::MatrixXd out(static_cast<Eigen::Index>(ids.size()), dimension());
    for (std::size_t i = 0; i < ids.size(); ++i) {
        auto it = index_.find(ids[i]);
        if (it == index_.end())
            throw ValidationError("no embedding for message " + ids[i]);
        out.row(static_cast<Eigen::Index>(i)) = values_.row(it->second).cast<double>();
    }
    return out;
}

std::string EmbeddingMatrix::encode() const
{
    std::string out = "EMB1";
    put_u32(out, static_cast<std::uint32_t>(values_.rows()));
    put_u32(out, static_cast<std::uint32_t>(values_.cols()));
    out.reserve(out.size() + 4 * static_cast<std::size_t>(values_.size()));
    const float* p = values_.data();
    for (Eigen::Index i = 0; i < values_.size(); ++i)
        put_u32(out, std::bit_cast<std::uint32_t>(p[i]));
    return out;
}

std::string EmbeddingMatrix::manifest_text() const
{
    std::string out;
    for (const auto& id : ids_) {
        out += id;
        out += '\n';
    }
    return out;
}

EmbeddingMatrix EmbeddingMatrix::decode(std::string_view bytes, std::string_view manifest)
{
    if (bytes.size() < 12 || bytes.substr(0, 4) != "EMB1")
        throw ValidationError("not an EMB1 file");
    const auto rows = get_u32(bytes, 4);
    const auto dim = get_u32(bytes, 8);
    const auto expected = 12 + 4ULL * rows * dim;
    if (bytes.size() != expected)
        throw ValidationError("EMB1 payload size " + std::to_string(bytes.size()) + " does not match header ("
                              + std::to_string(expected) + ")");
    FloatRows values(rows, dim);
    float* p = values.data();
    for (std::size_t i = 0; i < static_cast<std::size_t>(rows) * dim; ++i)
        p[i] = std::bit_cast<float>(get_u32(bytes, 12 + 4 * i));

    std::vector<std::string> ids;
    std::size_t pos = 0;
    while (pos < manifest.size()) {
        auto nl = manifest.find('\n', pos);
        if (nl == std::string_view::npos)
            nl = manifest.size();
        auto line = manifest.substr(pos, nl - pos);
        if (!line.empty() && line.back() == '\r')
            line.remove_suffix(1);
        if (!line.empty())
            ids.emplace_back(line);
        pos = nl + 1;
    }
    return EmbeddingMatrix(std::move(values), std::move(ids));
}

EmbeddingMatrix EmbeddingMatrix::load(const std::filesystem::path& emb, const std::filesystem::path& manifest)
{
    return decode(read_file(emb), read_file(manifest));
}

} // namespace sentrend
