#include "vpo/countermeasures.hpp"

#include <fmt/format.h>
#include <spdlog/spdlog.h>

namespace vpo {

namespace {

std::string suffix_of(const ImageRef& image) {
  const auto pos = image.id.find(kIdentitySeparator);
  return pos == std::string::npos ? std::string("x0") : image.id.substr(pos + 1);
}

}  // namespace

NormalizedPair normalize_pair(const ImageRef& a, const ImageRef& b, const TaskSpec& task, int kappa,
                              const Backends& backends, Stream& stream) {
  if (kappa < 0) throw PreconditionError("normalize_pair: kappa must be non-negative");
  if (a.identity_id == b.identity_id) {
    throw PreconditionError("normalize_pair: both images show identity " + a.identity_id);
  }
  NormalizedPair out{a, b, 0};
  if (kappa == 0) return out;
  if (!backends.normalizer || !backends.editor) throw PreconditionError("normalize_pair: no normalizer/editor backend");

  // Suffixes name the origin image and its partner so the same image can be
  // normalized against many partners without id clashes.
  const std::string tag_a = suffix_of(a) + ".vs." + hex64(fnv1a(b.id)).substr(0, 8);
  const std::string tag_b = suffix_of(b) + ".vs." + hex64(fnv1a(a.id)).substr(0, 8);
  for (int pass = 1; pass <= kappa; ++pass) {
    const CallContext plan_ctx = stream.next();
    const CallContext edit_a = stream.next();
    const CallContext edit_b = stream.next();
    try {
      auto [ia, ib] = backends.normalizer->plan(plan_ctx, task.context_removal_instruction, out.a, out.b);
      ImageRef ea = backends.editor->edit(edit_a, out.a, ia, {});
      ImageRef eb = backends.editor->edit(edit_b, out.b, ib, {});
      ImageRef na = derive_image(out.a, fmt::format("{}.n{}", tag_a, pass), Variant::normalized(pass),
                                 std::move(ea.payload), ia);
      ImageRef nb = derive_image(out.b, fmt::format("{}.n{}", tag_b, pass), Variant::normalized(pass),
                                 std::move(eb.payload), ib);
      validate(na);
      validate(nb);
      out.a = std::move(na);
      out.b = std::move(nb);
      out.passes = pass;
    } catch (const Error& e) {
      spdlog::warn("normalize_pair: pass {} of {} for {} / {} failed, keeping pass {}: {}", pass, kappa,
                   a.id, b.id, pass - 1, e.what());
      break;
    }
  }
  return out;
}

TournamentResult evaluate_mitigation(const std::vector<Pairing>& pairs, const TaskSpec& task,
                                     const Backends& backends,
                                     std::span<const std::shared_ptr<Judge>> evaluators,
                                     const MitigationSettings& settings, const Clock& clock) {
  TournamentResult all;
  for (int kappa : settings.kappas) {
    if (kappa < 0) throw PreconditionError("evaluate_mitigation: negative kappa");
    std::vector<Pairing> normalized;
    normalized.reserve(pairs.size());
    for (const auto& p : pairs) {
      auto stream = Stream::named(settings.seed, fmt::format("{}/normalize/k{}/{}", to_string(task.task_id),
                                                              kappa, p.pair_id()));
      auto np = normalize_pair(p.left.image, p.right.image, task, kappa, backends, stream);
      Pairing q = p;
      q.left.record_as = p.left.recorded();
      q.right.record_as = p.right.recorded();
      q.left.image = std::move(np.a);
      q.right.image = std::move(np.b);
      normalized.push_back(std::move(q));
    }
    TournamentSettings ts;
    ts.task = task.task_id;
    ts.instruction = settings.instruction;
    ts.kappa = kappa;
    auto stream = Stream::named(settings.seed, fmt::format("{}/mitigation/k{}", to_string(task.task_id), kappa));
    all.append(run_tournament(normalized, evaluators, ts, stream, clock));
  }
  return all;
}

std::string distill_prompt(const std::vector<Theme>& themes, const TaskSpec& task) {
  if (themes.empty()) throw PreconditionError("distill_prompt: no themes");
  std::string out = task.distill_header;
  for (const auto& t : themes) {
    if (!out.empty()) out += '\n';
    out += "- " + t.name;
    if (t.description && !t.description->empty()) out += ": " + *t.description;
  }
  const std::string footer =
      task.distill_footer.find("exactly unchanged") == std::string::npos
          ? (task.distill_footer.empty() ? std::string(kDefaultIdentityClause)
                                         : task.distill_footer + " " + std::string(kDefaultIdentityClause))
          : task.distill_footer;
  return out + "\n" + footer;
}

std::string distill_prompt(const interpret::ThemeNode& top, const TaskSpec& task) {
  return distill_prompt(top.themes, task);
}

ImageRef apply_distilled(const ImageRef& x0, const std::string& distilled_prompt, const Backends& backends,
                         const CallContext& ctx) {
  if (x0.variant != Variant::original()) throw PreconditionError("apply_distilled: expects an original image");
  if (!backends.editor) throw PreconditionError("apply_distilled: no editor backend");
  ImageRef edited = backends.editor->edit(ctx, x0, distilled_prompt, {});
  ImageRef out = derive_image(x0, "distilled", Variant::distilled(), std::move(edited.payload), distilled_prompt);
  validate(out);
  if (!identity_check(backends.verifier.get(), ctx, out, x0)) {
    throw BackendError("apply_distilled: identity check failed for " + out.id);
  }
  return out;
}

}  // namespace vpo
