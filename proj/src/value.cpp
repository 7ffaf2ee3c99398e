#include "abacus/value.hpp"

namespace abacus {

nlohmann::json to_json(const Value& v) {
    return std::visit(
        [](const auto& x) -> nlohmann::json {
            using T = std::decay_t<decltype(x)>;
            if constexpr (std::is_same_v<T, Null>) {
                return nullptr;
            } else if constexpr (std::is_same_v<T, BlobDigest>) {
                return {{"blob_sha256", x.sha256}};
            } else {
                return x;
            }
        },
        v);
}

Value value_from_json(const nlohmann::json& j) {
    if (j.is_null()) return Null{};
    if (j.is_number_integer()) return j.get<std::int64_t>();
    if (j.is_number()) return j.get<double>();
    if (j.is_string()) return j.get<std::string>();
    if (j.is_object() && j.contains("blob_sha256")) return BlobDigest{j.at("blob_sha256").get<std::string>()};
    return j.dump();
}

} // namespace abacus
