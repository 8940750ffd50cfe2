#ifndef HARMICL_PROMPTING_HPP
#define HARMICL_PROMPTING_HPP

#include <optional>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include "harmicl/corpus.hpp"
#include "harmicl/selectors.hpp"
#include "json.hpp"

namespace harmicl {

// PlainCompletion: Mistral-style text and OpenFlamingo-style interleaved image text.
// LlamaInst: [INST]-wrapped text. ChatMessages: role-tagged messages.
// MultimodalChat: role-tagged messages that may carry images.
enum class PromptFamily { PlainCompletion, LlamaInst, ChatMessages, MultimodalChat };

enum class Approach { ZSL, FS_ICL, FS_ICL_CG, FS_ICL_DII };

std::string_view to_string(PromptFamily f);
std::optional<PromptFamily> parse_prompt_family(std::string_view s);
std::string_view to_string(Approach a);

enum class Role { System, User, Assistant };
std::string_view to_string(Role r);

struct ChatMessage {
  Role role;
  std::string content;
  std::optional<std::string> image_ref;

  bool operator==(const ChatMessage&) const = default;
};

struct RenderedPrompt {
  PromptFamily family;
  std::optional<std::string> text;
  std::optional<std::vector<ChatMessage>> messages;
  // Images referenced by <image> markers in `text`, in order.
  std::vector<std::string> images;
};

class PromptError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct PromptOptions {
  // Adds the harm-category definitions block after the task instruction.
  bool descriptive = false;
};

RenderedPrompt render_zsl(const ContentSample& sample, PromptFamily family,
                          const PromptOptions& options = {});

/// Few-shot text prompt. With k = 0 and no captions this is byte-identical to render_zsl.
RenderedPrompt render_fs_icl(const ContentSample& sample, const ExemplarSet& exemplars,
                             PromptFamily family, bool with_captions,
                             const PromptOptions& options = {});

/// Direct image input. Supported by MultimodalChat and by PlainCompletion as
/// interleaved <image> chunks.
RenderedPrompt render_dii(const ContentSample& sample, const ExemplarSet& exemplars,
                          PromptFamily family);

RenderedPrompt render(Approach approach, const ContentSample& sample, const ExemplarSet& exemplars,
                      PromptFamily family, const PromptOptions& options = {});

enum class ParsedValue { Harmful, Harmless, Unparseable };

struct ParsedLabel {
  ParsedValue value = ParsedValue::Unparseable;
  std::string raw;

  std::optional<Label> label() const {
    if (value == ParsedValue::Harmful) return Label::Harmful;
    if (value == ParsedValue::Harmless) return Label::Harmless;
    return std::nullopt;
  }
};

std::string_view to_string(ParsedValue v);

/// Whole-word, case-insensitive search for exactly one of "harmful" / "harmless".
ParsedLabel parse_label(std::string_view raw);

/// Canonical JSON form of a prompt, used for golden files and hashing.
nlohmann::json prompt_to_json(const RenderedPrompt& prompt);

/// SHA-256 over the canonical serialization.
std::string prompt_hash(const RenderedPrompt& prompt);

/// Digest of every template string; changes whenever any template changes.
const std::string& template_version();

/// Text of the item being classified: the title in the last Title line, or the
/// caption of the last <image> chunk for interleaved prompts.
std::string query_segment(const RenderedPrompt& prompt);

}  // namespace harmicl

#endif  // HARMICL_PROMPTING_HPP
