#include "vpo/core.hpp"

#include <algorithm>
#include <charconv>

namespace vpo {

namespace {

int parse_index(std::string_view text, std::string_view whole) {
  int value = 0;
  auto [ptr, ec] = std::from_chars(text.data(), text.data() + text.size(), value);
  if (ec != std::errc{} || ptr != text.data() + text.size())
    throw SchemaError("bad variant index in '" + std::string(whole) + "'");
  return value;
}

}  // namespace

std::string to_string(TaskId task) {
  switch (task) {
    case TaskId::Hotels: return "hotels";
    case TaskId::Houses: return "houses";
    case TaskId::People: return "people";
    case TaskId::Products: return "products";
    case TaskId::Custom: return "custom";
  }
  return "custom";
}

TaskId parse_task(std::string_view text) {
  if (text == "hotels") return TaskId::Hotels;
  if (text == "houses") return TaskId::Houses;
  if (text == "people") return TaskId::People;
  if (text == "products") return TaskId::Products;
  if (text == "custom") return TaskId::Custom;
  throw SchemaError("unknown task '" + std::string(text) + "'");
}

std::string to_string(Strategy strategy) {
  switch (strategy) {
    case Strategy::VTG: return "VTG";
    case Strategy::VFD: return "VFD";
    case Strategy::CVPO: return "CVPO";
    case Strategy::None: return "none";
  }
  return "none";
}

Strategy parse_strategy(std::string_view text) {
  if (text == "VTG") return Strategy::VTG;
  if (text == "VFD") return Strategy::VFD;
  if (text == "CVPO") return Strategy::CVPO;
  if (text == "none") return Strategy::None;
  throw SchemaError("unknown strategy '" + std::string(text) + "'");
}

Variant Variant::step(int t) {
  if (t < 1) throw PreconditionError("Step(t) requires t >= 1");
  return {Kind::Step, t};
}

Variant Variant::normalized(int passes) {
  if (passes < 0) throw PreconditionError("Normalized(k) requires k >= 0");
  return {Kind::Normalized, passes};
}

std::string to_string(Variant v) {
  switch (v.kind) {
    case Variant::Kind::Original: return "Original";
    case Variant::Kind::ZeroShot: return "ZeroShot";
    case Variant::Kind::Step: return "Step(" + std::to_string(v.index) + ")";
    case Variant::Kind::Final: return "Final";
    case Variant::Kind::Distilled: return "Distilled";
    case Variant::Kind::Normalized: return "Normalized(" + std::to_string(v.index) + ")";
  }
  return "Original";
}

Variant parse_variant(std::string_view text) {
  if (text == "Original") return Variant::original();
  if (text == "ZeroShot") return Variant::zero_shot();
  if (text == "Final") return Variant::final_image();
  if (text == "Distilled") return Variant::distilled();
  auto parametrized = [&](std::string_view prefix) -> std::optional<int> {
    if (text.size() > prefix.size() + 2 && text.substr(0, prefix.size()) == prefix &&
        text[prefix.size()] == '(' && text.back() == ')')
      return parse_index(text.substr(prefix.size() + 1, text.size() - prefix.size() - 2), text);
    return std::nullopt;
  };
  if (auto t = parametrized("Step")) return Variant::step(*t);
  if (auto k = parametrized("Normalized")) return Variant::normalized(*k);
  throw SchemaError("unknown variant '" + std::string(text) + "'");
}

std::string identity_of(std::string_view image_id) {
  return std::string(image_id.substr(0, image_id.find(kIdentitySeparator)));
}

ImageRef make_original(std::string identity_id, Payload payload) {
  if (identity_id.empty() || identity_id.find(kIdentitySeparator) != std::string::npos)
    throw PreconditionError("identity id must be non-empty and free of '~': " + identity_id);
  ImageRef image;
  image.id = identity_id;
  image.identity_id = std::move(identity_id);
  image.variant = Variant::original();
  image.payload = std::move(payload);
  return image;
}

ImageRef derive_image(const ImageRef& parent, std::string_view id_suffix, Variant variant,
                      Payload payload, std::string producing_prompt) {
  if (id_suffix.empty()) throw PreconditionError("derived image needs an id suffix");
  if (variant.kind == Variant::Kind::Original)
    throw PreconditionError("derived image cannot be tagged Original");
  ImageRef child;
  child.id = parent.identity_id + kIdentitySeparator + std::string(id_suffix);
  child.identity_id = parent.identity_id;
  child.variant = variant;
  child.payload = std::move(payload);
  child.parent = parent.id;
  child.producing_prompt = std::move(producing_prompt);
  return child;
}

void validate(const ImageRef& image) {
  if (image.id.empty() || image.identity_id.empty())
    throw PreconditionError("image id and identity id are required");
  if (identity_of(image.id) != image.identity_id)
    throw PreconditionError("image id '" + image.id + "' does not carry identity '" +
                            image.identity_id + "'");
  const bool is_original = image.variant.kind == Variant::Kind::Original;
  if (is_original == image.parent.has_value())
    throw PreconditionError("variant Original must be exactly the parentless images: " + image.id);
  if (image.variant.kind == Variant::Kind::Step && image.variant.index < 1)
    throw PreconditionError("Step(t) needs t >= 1: " + image.id);
}

std::string compose(std::string_view base_prior, std::string_view residual) {
  if (base_prior.empty()) throw PreconditionError("compose: base prior must be non-empty");
  std::string out(base_prior);
  if (!residual.empty()) {
    out += "\n\n";
    out += residual;
  }
  return out;
}

PromptState PromptState::make(std::string base_prior, std::string residual) {
  PromptState state;
  state.composed = compose(base_prior, residual);
  state.base_prior = std::move(base_prior);
  state.residual = std::move(residual);
  return state;
}

void TaskSpec::validate() const {
  if (base_prior.empty()) throw PreconditionError("task: base prior must be non-empty");
  if (judge_instructions.empty())
    throw PreconditionError("task: at least one judge instruction is required");
  if (evaluator_instruction.empty())
    throw PreconditionError("task: evaluator instruction is required");
}

std::optional<std::string> TaskSpec::category_of(const std::string& identity_id) const {
  if (!category_labels) return std::nullopt;
  auto it = category_labels->find(identity_id);
  if (it == category_labels->end()) return std::nullopt;
  return it->second;
}

std::string to_string(Outcome outcome) {
  switch (outcome) {
    case Outcome::Left: return "left";
    case Outcome::Right: return "right";
    case Outcome::Inconsistent: return "inconsistent";
  }
  return "inconsistent";
}

Outcome parse_outcome(std::string_view text) {
  if (text == "left") return Outcome::Left;
  if (text == "right") return Outcome::Right;
  if (text == "inconsistent") return Outcome::Inconsistent;
  throw SchemaError("unknown outcome '" + std::string(text) + "'");
}

std::string to_string(StrategyTag tag) {
  if (tag.left == tag.right) return to_string(tag.left);
  return to_string(tag.left) + "|" + to_string(tag.right);
}

StrategyTag parse_strategy_tag(std::string_view text) {
  auto bar = text.find('|');
  if (bar == std::string_view::npos) return StrategyTag::same(parse_strategy(text));
  return {parse_strategy(text.substr(0, bar)), parse_strategy(text.substr(bar + 1))};
}

std::string TrialRecord::trial_id() const {
  return pair_id + "#" + evaluator + "#k" + std::to_string(kappa);
}

std::string make_pair_id(std::string_view a, std::string_view b) {
  if (b < a) std::swap(a, b);
  std::string out(a);
  out += "|";
  out += b;
  return out;
}

void validate(const TrialRecord& r) {
  if (r.left.image_id.empty() || r.right.image_id.empty())
    throw SchemaError("trial: image ids are required");
  if (!(r.left.image_id < r.right.image_id))
    throw SchemaError("trial: sides must be in canonical order: " + r.pair_id);
  if (identity_of(r.left.image_id) == identity_of(r.right.image_id))
    throw SchemaError("trial: self-comparison of identity " + identity_of(r.left.image_id));
  if (r.pair_id != make_pair_id(r.left.image_id, r.right.image_id))
    throw SchemaError("trial: pair id does not match sides: " + r.pair_id);
  if (!r.left.status.is_status() || !r.right.status.is_status())
    throw SchemaError("trial: Step variants never enter tournaments");
  if (r.order_index != 0 && r.order_index != 1) throw SchemaError("trial: order_index must be 0 or 1");
  if (r.kappa < 0) throw SchemaError("trial: kappa must be >= 0");
  if (r.evaluator.empty()) throw SchemaError("trial: evaluator is required");
}

}  // namespace vpo
