#pragma once

#include <optional>
#include <string>

#include "moma/llm_backend.h"
#include "moma/prompts.h"

namespace moma {

// Everything an answering method needs besides the item and the backend.
struct MethodContext {
  const PromptLibrary* prompts = nullptr;
  // Required only for ABP methods.
  const AbpPromptSet* abp = nullptr;
  MaskSymbolScheme scheme = MaskSymbolScheme::letter_pair();
  // Profile defaults (temperature, max_tokens, model).
  GenParams params;
  // Self-consistency sampling temperature.
  double sc_temperature = 0.7;
  // Mask answer options together with context and question.
  bool mask_options = false;
};

}  // namespace moma
