"""
提示词模板
查询生成、准则编译、预测三段模板固定不变；反思、经验总结、网页摘要三段可按需调整
"""

from string import Template
from typing import Sequence

GUIDELINE_SECTION_MARKER = "Task-Specific Guideline"
APPLICABILITY_HEADER = "CRITICAL: Experience Applicability Check"

QUERY_GENERATION_TEMPLATE = Template("""\
You are exploring an experience database to find relevant past predictions that can help with a new task.

Current Task: $question

The experience database contains past prediction experiences with these fields:
- question: The prediction question/task title
- improvement: Key insights on how to improve similar predictions
- failure_reason: What went wrong in past predictions
- missed_information: Information sources that were missed
- category: Domain category (politics, technology, etc.)

Generate 2-3 search queries. For each, specify the text and search type: "question" or "experience".

Output as JSON:
{
  "queries": [
    {"query": "...", "search_target": "..."}
  ]
}""")

GUIDELINE_COMPILE_TEMPLATE = Template("""\
You are synthesizing insights from past prediction experiences to create a guideline for a new prediction task.

Current Task: $question

Relevant Past Experiences Found:
$experiences

$applicability

Based on these experiences AND the applicability check, generate a FOCUSED and ACTIONABLE guideline (3-5 bullet points) for this prediction task.

Output ONLY the bullet points.""")

PREDICTION_TEMPLATE = Template("""\
You are tasked with predicting the probability of different outcomes for the following event:

Event: $question
Possible outcomes: $outcomes
$guideline_block
Your task:
1. Research this event by searching for relevant information online.
2. Analyze the information to assess the likelihood of each outcome.
3. Provide a probability estimate (between 0 and 1) for each possible outcome.

Only information published before $cutoff is available.

Output as JSON mapping each possible outcome to its probability, for example: $example""")

GUIDELINE_BLOCK_TEMPLATE = Template("""
Task-Specific Guideline
$bullets

CRITICAL: How to Properly Use This Guideline
1. Verify Applicability: Assess if the current task matches the context of the lesson.
2. Trust Your Current Research: If fresh findings contradict the guideline, prioritize fresh evidence.
""")

REFLECTION_TEMPLATE = Template("""\
A guideline compiled from past experiences did not improve a prediction compared with predicting without memory.

Task: $question

Compiled guideline:
$bullets

Experiences used:
$experiences

Diagnose what went wrong in the way the experiences were synthesized into the guideline, and write an instruction that future guideline synthesis should follow to avoid this failure.

Output as JSON:
{"failure_pattern": "...", "synthesis_instruction": "..."}""")

SUMMARIZATION_TEMPLATE = Template("""\
You are reviewing a past prediction attempt to extract a reusable lesson for similar future tasks.

Task: $question
Possible outcomes: $outcomes
Realized outcome: $outcome

Trajectory of the attempt:
$trajectory

Identify the domain category, why the prediction went wrong, what should be done differently next time, and which information sources were missed.

Output as JSON:
{"category": "...", "failure_reason": "...", "improvement": "...", "missed_information": "..."}""")

PAGE_SUMMARY_TEMPLATE = Template("""\
Summarize the following web page content, keeping every fact, number, date and name that could help answer: $question

Content:
$content""")


def format_outcomes(candidates: Sequence[str]) -> str:
    return ", ".join(f'"{c}"' for c in candidates)


def format_bullets(bullets: Sequence[str]) -> str:
    return "\n".join(f"- {b}" for b in bullets)


def applicability_section(synthesis_instruction: str) -> str:
    """元准则注入到适用性检查一节"""
    text = synthesis_instruction.strip()
    if text.startswith(APPLICABILITY_HEADER):
        return text
    return f"{APPLICABILITY_HEADER}\n{text}"
