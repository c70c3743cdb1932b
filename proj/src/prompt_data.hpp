#pragma once

namespace creward::detail {

extern const char* const kAgnosticTemplatesJsonl;
extern const char* const kChairSpecificJsonl;
extern const char* const kAssessmentPromptsJsonl;
extern const char* const kGuidancePromptsJsonl;

}  // namespace creward::detail
