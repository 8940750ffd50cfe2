#include "harmicl/prompting.hpp"

#include <array>
#include <cctype>

#include "harmicl/util.hpp"

namespace harmicl {
namespace {

constexpr std::string_view kInstruction =
    "Your task is to classify YouTube videos as Harmful or Harmless based on their metadata.";
constexpr std::string_view kOneWordRule =
    "You must respond with only one word: \"Harmful\" or \"Harmless\" without any additional "
    "commentary or explanation.";
// The zero-shot Llama system text differs from the few-shot one ("evaluate", comma).
constexpr std::string_view kLlamaZeroShotSystem =
    "Your task is to evaluate YouTube videos as Harmful or Harmless based on their metadata. You "
    "must respond with only one word: \"Harmful\" or \"Harmless,\" without any additional "
    "commentary or explanation.";

constexpr std::string_view kDefinitions =
    "Determine if a video fits into any of the harmful categories listed below. If it does, "
    "classify the video as 'Harmful'. If it does not, classify it as 'Harmless'.\n"
    "[Harmful Categories]\n"
    "1. Information Harms (e.g., Fake news, Conspiracy theories, Unverified medical treatments, "
    "Unproven scientific myths)\n"
    "2. Hate and Harassment Harms (e.g., Insult, obscenities, Identity attacks or "
    "misrepresentation, Hate speech based on gender, race, religion, disability, sexual "
    "orientation)\n"
    "3. Addictive Harms (e.g Game play, Drug promotion, Gambling videos and gambling promotion)\n"
    "4. Clickbaitive Harms (Clickbait titles - using exaggerated words, such as \"top 10\", "
    "\"best/most\", \"how to\", \"hacks\", get-rich-quick schemes and financial scams, Gossip about "
    "celebrities)\n"
    "5. Sexual Harms (e.g., Erotic clips extracted from non-pornographic films, Depiction of sexual "
    "acts, such as sex and groping, Depiction of clothed or unclothed genitals, breasts, or "
    "buttocks)\n"
    "6. Physical Harms (e.g, Self-injury, Eating disorder promotion, Potentially dangerous "
    "challenges and pranks, Violent content)";

constexpr std::string_view kLlamaOpen = "<s>[INST] <<SYS>>\n";
constexpr std::string_view kLlamaSysClose = "\n<</SYS>>\n";
constexpr std::string_view kLlamaTurn = "[/INST]</s><s>[INST] ";
constexpr std::string_view kLlamaClose = "[/INST]";

constexpr std::string_view kDiiSystem =
    "You are a helpful image classification assistant. You must classify given image analyzing the "
    "image and Title whether it is harmful or harmless.";
constexpr std::string_view kDiiUserHead =
    "You are a helpful image classification assistant. You must classify given image whether it is "
    "harmful or harmless analyzing the image and Title:";
constexpr std::string_view kDiiUserTail =
    ". Harmful: This category includes images depicting sexuality, gambling, violence, weapons, "
    "click bait, spam, harmful, or inappropriate content. Examples might be scenes of physical "
    "violence, display of sexual affection, weapons, sharp objects, explicit content, spam content, "
    "gambling, click bait content or dangerous situations. Harmless: This category includes images "
    "that are non-violent, safe, and appropriate. Examples might be everyday scenes, landscapes, or "
    "social gatherings without harmful context. If you are not sure, pick whatever label you think "
    "is more probable based on your analysis. Give the output in one word if is is harmful or "
    "harmless. Do not explain anything";

constexpr std::string_view kImageMarker = "<image> ";
constexpr std::string_view kChunkLabel = ". Classification:";
constexpr std::string_view kEndOfChunk = "<|endofchunk|>";

std::string with_definitions(std::string_view head, const PromptOptions& options) {
  std::string out(head);
  if (options.descriptive) (out += '\n') += kDefinitions;
  return out;
}

const std::string& caption_of(const ContentSample& s) {
  if (!s.caption || s.caption->empty())
    throw PromptError("sample \"" + s.id + "\" has no caption for a caption prompt");
  return *s.caption;
}

const std::string& image_of(const ContentSample& s) {
  if (!s.image_ref || s.image_ref->empty())
    throw PromptError("sample \"" + s.id + "\" has no image_ref for a direct-image prompt");
  return *s.image_ref;
}

void require_title(const ContentSample& s) {
  if (s.title.empty()) throw PromptError("sample \"" + s.id + "\" has an empty title");
}

// "Title: t\n[Caption: c\n]" for plain text; "Title: t[ Caption: c]\n" for INST and chat.
std::string item_block(const ContentSample& s, bool with_captions, bool caption_on_own_line) {
  std::string out = "Title: " + s.title;
  if (with_captions) out += (caption_on_own_line ? "\nCaption: " : " Caption: ") + caption_of(s);
  out += '\n';
  return out;
}

std::string chat_item(const ContentSample& s, bool with_captions) {
  return item_block(s, with_captions, false) + "Classification:";
}

RenderedPrompt text_prompt(PromptFamily family, std::string text) {
  RenderedPrompt p{family, std::move(text), std::nullopt, {}};
  return p;
}

RenderedPrompt chat_prompt(PromptFamily family, std::vector<ChatMessage> messages) {
  RenderedPrompt p{family, std::nullopt, std::move(messages), {}};
  return p;
}

RenderedPrompt render_text(const ContentSample& sample, const ExemplarSet& exemplars,
                           PromptFamily family, bool with_captions, const PromptOptions& options) {
  const bool zero_shot = exemplars.empty();
  switch (family) {
    case PromptFamily::PlainCompletion: {
      std::string text = with_definitions(kInstruction, options) + "\n";
      for (const auto& e : exemplars.items)
        (text += item_block(e.sample, with_captions, true) + "Classification: ")
            .append(to_string(e.label)) += '\n';
      text += item_block(sample, with_captions, true) + "Classification:";
      return text_prompt(family, std::move(text));
    }
    case PromptFamily::LlamaInst: {
      std::string text(kLlamaOpen);
      if (zero_shot) {
        text += with_definitions(kLlamaZeroShotSystem, options);
      } else {
        std::string system(kInstruction);
        (system += ' ') += kOneWordRule;
        text += with_definitions(system, options);
      }
      text += kLlamaSysClose;
      for (const auto& e : exemplars.items)
        ((text += item_block(e.sample, with_captions, false) + "Classification: ")
             .append(to_string(e.label)))
            .append(kLlamaTurn);
      (text += item_block(sample, with_captions, false) + "Classification: ").append(kLlamaClose);
      return text_prompt(family, std::move(text));
    }
    case PromptFamily::ChatMessages:
    case PromptFamily::MultimodalChat: {
      std::string head(kInstruction);
      if (zero_shot) (head += ' ') += kOneWordRule;
      std::vector<ChatMessage> messages;
      messages.push_back({Role::User, with_definitions(head, options), std::nullopt});
      for (const auto& e : exemplars.items) {
        messages.push_back({Role::User, chat_item(e.sample, with_captions), std::nullopt});
        messages.push_back({Role::Assistant, std::string(to_string(e.label)), std::nullopt});
      }
      messages.push_back({Role::User, chat_item(sample, with_captions), std::nullopt});
      return chat_prompt(family, std::move(messages));
    }
  }
  throw PromptError("unsupported prompt family");
}

std::string dii_user_text(const ContentSample& s) {
  return std::string(kDiiUserHead) + s.title + std::string(kDiiUserTail);
}

std::vector<std::string_view> all_templates() {
  return {kInstruction, kOneWordRule, kLlamaZeroShotSystem, kDefinitions, kLlamaOpen,
          kLlamaSysClose, kLlamaTurn, kLlamaClose, kDiiSystem, kDiiUserHead,
          kDiiUserTail, kImageMarker, kChunkLabel, kEndOfChunk};
}

}  // namespace

std::string_view to_string(PromptFamily f) {
  switch (f) {
    case PromptFamily::PlainCompletion: return "PlainCompletion";
    case PromptFamily::LlamaInst: return "LlamaInst";
    case PromptFamily::ChatMessages: return "ChatMessages";
    case PromptFamily::MultimodalChat: return "MultimodalChat";
  }
  return "?";
}

std::optional<PromptFamily> parse_prompt_family(std::string_view s) {
  for (auto f : {PromptFamily::PlainCompletion, PromptFamily::LlamaInst, PromptFamily::ChatMessages,
                 PromptFamily::MultimodalChat})
    if (to_string(f) == s) return f;
  return std::nullopt;
}

std::string_view to_string(Approach a) {
  switch (a) {
    case Approach::ZSL: return "ZSL";
    case Approach::FS_ICL: return "FS_ICL";
    case Approach::FS_ICL_CG: return "FS_ICL_CG";
    case Approach::FS_ICL_DII: return "FS_ICL_DII";
  }
  return "?";
}

std::string_view to_string(Role r) {
  switch (r) {
    case Role::System: return "system";
    case Role::User: return "user";
    case Role::Assistant: return "assistant";
  }
  return "?";
}

std::string_view to_string(ParsedValue v) {
  switch (v) {
    case ParsedValue::Harmful: return "Harmful";
    case ParsedValue::Harmless: return "Harmless";
    case ParsedValue::Unparseable: return "Unparseable";
  }
  return "?";
}

RenderedPrompt render_zsl(const ContentSample& sample, PromptFamily family,
                          const PromptOptions& options) {
  require_title(sample);
  return render_text(sample, ExemplarSet{}, family, false, options);
}

RenderedPrompt render_fs_icl(const ContentSample& sample, const ExemplarSet& exemplars,
                             PromptFamily family, bool with_captions,
                             const PromptOptions& options) {
  require_title(sample);
  for (const auto& e : exemplars.items) require_title(e.sample);
  return render_text(sample, exemplars, family, with_captions, options);
}

RenderedPrompt render_dii(const ContentSample& sample, const ExemplarSet& exemplars,
                          PromptFamily family) {
  require_title(sample);
  switch (family) {
    case PromptFamily::MultimodalChat: {
      std::vector<ChatMessage> messages;
      messages.push_back({Role::System, std::string(kDiiSystem), std::nullopt});
      for (const auto& e : exemplars.items) {
        messages.push_back({Role::User, dii_user_text(e.sample), image_of(e.sample)});
        messages.push_back({Role::Assistant, std::string(to_string(e.label)), std::nullopt});
      }
      messages.push_back({Role::User, dii_user_text(sample), image_of(sample)});
      return chat_prompt(family, std::move(messages));
    }
    case PromptFamily::PlainCompletion: {
      RenderedPrompt p = text_prompt(family, {});
      std::string& text = *p.text;
      for (const auto& e : exemplars.items) {
        p.images.push_back(image_of(e.sample));
        ((text += kImageMarker) += caption_of(e.sample)).append(kChunkLabel);
        (text += to_string(e.label)) += kEndOfChunk;
      }
      p.images.push_back(image_of(sample));
      ((text += kImageMarker) += caption_of(sample)).append(kChunkLabel);
      return p;
    }
    case PromptFamily::LlamaInst:
    case PromptFamily::ChatMessages:
      throw PromptError(std::string("prompt family ") + std::string(to_string(family)) +
                        " does not accept image input");
  }
  throw PromptError("unsupported prompt family");
}

RenderedPrompt render(Approach approach, const ContentSample& sample, const ExemplarSet& exemplars,
                      PromptFamily family, const PromptOptions& options) {
  switch (approach) {
    case Approach::ZSL: return render_zsl(sample, family, options);
    case Approach::FS_ICL: return render_fs_icl(sample, exemplars, family, false, options);
    case Approach::FS_ICL_CG: return render_fs_icl(sample, exemplars, family, true, options);
    case Approach::FS_ICL_DII: return render_dii(sample, exemplars, family);
  }
  throw PromptError("unsupported approach");
}

ParsedLabel parse_label(std::string_view raw) {
  ParsedLabel out;
  out.raw = std::string(raw);
  bool harmful = false, harmless = false;
  std::size_t i = 0;
  while (i < raw.size()) {
    while (i < raw.size() && !std::isalnum(static_cast<unsigned char>(raw[i]))) ++i;
    std::size_t j = i;
    while (j < raw.size() && std::isalnum(static_cast<unsigned char>(raw[j]))) ++j;
    if (j > i) {
      const auto word = to_lower(raw.substr(i, j - i));
      harmful |= word == "harmful";
      harmless |= word == "harmless";
    }
    i = j;
  }
  if (harmful != harmless) out.value = harmful ? ParsedValue::Harmful : ParsedValue::Harmless;
  return out;
}

nlohmann::json prompt_to_json(const RenderedPrompt& prompt) {
  nlohmann::json j{{"family", to_string(prompt.family)}};
  if (prompt.text) j["text"] = *prompt.text;
  if (!prompt.images.empty()) j["images"] = prompt.images;
  if (prompt.messages) {
    auto& arr = j["messages"] = nlohmann::json::array();
    for (const auto& m : *prompt.messages) {
      nlohmann::json msg{{"role", to_string(m.role)}, {"content", m.content}};
      if (m.image_ref) msg["image_ref"] = *m.image_ref;
      arr.push_back(std::move(msg));
    }
  }
  return j;
}

std::string prompt_hash(const RenderedPrompt& prompt) {
  return sha256_hex(prompt_to_json(prompt).dump());
}

const std::string& template_version() {
  static const std::string version = [] {
    std::string all;
    for (auto t : all_templates()) (all += t) += '\x1f';
    return sha256_hex(all).substr(0, 16);
  }();
  return version;
}

std::string query_segment(const RenderedPrompt& prompt) {
  std::string_view text;
  if (prompt.text) {
    text = *prompt.text;
  } else if (prompt.messages) {
    for (auto it = prompt.messages->rbegin(); it != prompt.messages->rend(); ++it)
      if (it->role == Role::User) {
        text = it->content;
        break;
      }
  }
  if (text.empty()) return {};
  if (auto pos = text.rfind(kDiiUserHead); pos != std::string_view::npos) {
    auto rest = text.substr(pos + kDiiUserHead.size());
    return std::string(rest.substr(0, rest.rfind(kDiiUserTail)));
  }
  if (auto pos = text.rfind("Title: "); pos != std::string_view::npos) {
    const std::string rest(text.substr(pos + 7));
    auto end = std::min(rest.find('\n'), rest.find(" Caption: "));
    return rest.substr(0, end);
  }
  if (auto pos = text.rfind(kImageMarker); pos != std::string_view::npos) {
    auto rest = text.substr(pos + kImageMarker.size());
    return std::string(rest.substr(0, rest.rfind(kChunkLabel)));
  }
  return std::string(text);
}

}  // namespace harmicl
