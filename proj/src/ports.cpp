#include "vpo/ports.hpp"

#include <spdlog/spdlog.h>

namespace vpo {

std::vector<Theme> summarize(Summarizer& summarizer, const CallContext& ctx,
                             std::span<const std::string> items,
                             std::string_view schema_instruction) {
  if (items.empty()) throw PreconditionError("summarize: items must be non-empty");
  if (items.size() == 1) return {Theme{items.front(), std::nullopt}};
  auto themes = summarizer.summarize_many(ctx, items, schema_instruction);
  if (themes.empty()) throw BackendError("summarize: backend returned no themes");
  return themes;
}

bool identity_check(IdentityVerifier* verifier, const CallContext& ctx, const ImageRef& x,
                    const ImageRef& x0) {
  if (x.identity_id != x0.identity_id) return false;
  if (verifier == nullptr) {
    spdlog::warn("identity_check: no verifier configured, treating {} as identity-preserving",
                 x.id);
    return true;
  }
  return verifier->same_identity(ctx, x, x0);
}

}  // namespace vpo
