// Scoring rubric shown beside every item. One card per criterion with the
// three scale descriptions, plus the invalid flag available on each.

export const CRITERIA = ["Accuracy", "Logic", "Clarity", "Detail", "Relevancy"] as const;

export type Criterion = (typeof CRITERIA)[number];

export const SCALE = [1, 2, 3] as const;
export const INVALID_SCORE = -1;
export const SCORE_VALUES = [INVALID_SCORE, ...SCALE];

export const SCALE_LABELS: Record<number, string> = {
  1: "1 (Disagree)",
  2: "2 (Neutral)",
  3: "3 (Agree)",
  [INVALID_SCORE]: "-1 (Invalid)",
};

export interface RubricCard {
  criterion: Criterion;
  descriptions: Record<1 | 2 | 3, string>;
}

export const INVALID_DESCRIPTION =
  "The generated data is syntactically or semantically invalid.";

export const RUBRIC: RubricCard[] = [
  {
    criterion: "Accuracy",
    descriptions: {
      1: "QUESTION & SHORT ANSWER are not at all aligned with the context in the image (e.g., asking about something not present, too assumptive, or not related).",
      2: "QUESTION is valid, but the ANSWER is less accurate and does not fully match the context of the image.",
      3: "QUESTION is valid and SHORT ANSWER is accurate according to the context in the image, and appropriately addresses the question.",
    },
  },
  {
    criterion: "Logic",
    descriptions: {
      1: "EXPLANATION provides an explanation that is incorrect or contains elements that are unreasonable or not aligned with the context in the image.",
      2: "EXPLANATION provides an explanation that is somewhat accurate or logical, but there are some misalignments or gaps with the context in the image.",
      3: "EXPLANATION provides an explanation that is fully logical, clear, and entirely aligned with the context in the image, supporting the choice effectively.",
    },
  },
  {
    criterion: "Clarity",
    descriptions: {
      1: "EXPLANATION provides an explanation that is not easy to understand, is convoluted, or poorly structured, making it difficult to follow.",
      2: "EXPLANATION provides an explanation that is somewhat understandable but contains complexity or unnecessary details that make it less clear.",
      3: "EXPLANATION provides an explanation that is clear, straightforward, and easy to understand, presenting the information in a logical and concise manner.",
    },
  },
  {
    criterion: "Detail",
    descriptions: {
      1: "EXPLANATION only repeats the short answer or lacks sufficient detail to explain the justification for choosing the short answer, making it incomplete.",
      2: "EXPLANATION contains some detail but does not cover the full explanation needed for justifying the choice of the short answer, leaving gaps in the reasoning.",
      3: "EXPLANATION contains all necessary detail (or more) required to justify the choice of the short answer, providing a comprehensive and well-supported explanation.",
    },
  },
  {
    criterion: "Relevancy",
    descriptions: {
      1: "EXPLANATION contains a lot of irrelevant context that does not pertain to justifying the short answer or the context in the image, leading to confusion.",
      2: "EXPLANATION contains some irrelevant context that does not fully pertain to justifying the short answer or the context in the image, but is mostly relevant.",
      3: "EXPLANATION does not contain irrelevant context and is directly relevant to justifying the short answer based on the context in the image, staying on topic.",
    },
  },
];

export function isValidScore(value: number): boolean {
  return SCORE_VALUES.includes(value);
}
