#include <algorithm>
#include <cmath>

#include "cspeech/common.hpp"
#include "cspeech/metrics.hpp"

namespace cspeech::metrics {

std::vector<Matrix> HttpEmbedder::embed(std::span<const Tokens> sequences) const {
  std::vector<Matrix> out;
  out.reserve(sequences.size());
  for (std::size_t start = 0; start < sequences.size(); start += batch_size_) {
    const std::size_t end = std::min(sequences.size(), start + batch_size_);
    nlohmann::json body{{"tokens", nlohmann::json::array()}};
    for (std::size_t i = start; i < end; ++i) body["tokens"].push_back(sequences[i]);
    const auto response = post_json(endpoint_, body);
    if (!response.contains("embeddings") || !response["embeddings"].is_array() ||
        response["embeddings"].size() != end - start)
      throw InputError("embedder: response must hold one embedding matrix per sequence");
    for (std::size_t i = start; i < end; ++i) {
      auto m = response["embeddings"][i - start].get<Matrix>();
      if (m.size() != sequences[i].size())
        throw InputError("embedder: expected " + std::to_string(sequences[i].size()) + " vectors, got " +
                         std::to_string(m.size()));
      out.push_back(std::move(m));
    }
  }
  return out;
}

double HttpAcceptability::score(std::string_view sentence) const {
  const auto response = post_json(endpoint_, {{"sentences", {std::string(sentence)}}});
  if (!response.contains("scores") || !response["scores"].is_array() || response["scores"].size() != 1 ||
      !response["scores"][0].is_number())
    throw InputError("acceptability: response must hold one score");
  const double v = response["scores"][0].get<double>();
  if (!std::isfinite(v)) throw InputError("acceptability: non-finite score");
  return std::clamp(v, 0.0, 1.0);
}

}  // namespace cspeech::metrics
