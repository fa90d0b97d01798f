#pragma once

#include <optional>
#include <span>
#include <string_view>

namespace gdprtm {

// Normative flow/entity annotation vocabulary of the .dfd format. Unknown
// tokens are accepted with a warning so newer files keep loading.

inline constexpr std::string_view kConsentProvided = "ConsentProvided";
inline constexpr std::string_view kConsentRequestFormProvided = "ConsentRequestFormProvided";
inline constexpr std::string_view kRequestForErasingData = "RequestForErasingData";
inline constexpr std::string_view kRequestCleanData = "RequestCleanData";
inline constexpr std::string_view kRequestEraseData = "RequestEraseData";
inline constexpr std::string_view kCleanDataResponse = "CleanDataResponse";
inline constexpr std::string_view kNotifyRecipientAboutErasingData =
    "NotifyRecipientAboutErasingData";
inline constexpr std::string_view kEraseDataWithin28Days = "EraseDataWithin28Days";
inline constexpr std::string_view kComplainDataBreach = "ComplainDataBreach";
inline constexpr std::string_view kReportDataBreach = "ReportDataBreach";

std::span<const std::string_view> annotation_vocabulary();

bool is_known_annotation(std::string_view token);

/// Expands the diagram shorthand aliases (CP, CRFP) to their canonical
/// tokens; returns the input unchanged otherwise.
std::string_view expand_annotation_alias(std::string_view token);

}  // namespace gdprtm
