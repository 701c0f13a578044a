#!/usr/bin/env python3
"""Generate the synthetic fixture corpus.

Writes, under fixtures/:
  speeches/      corpus bundle (manifest.json, leaders.json, reviewers.json, sNNN.txt)
  stub_responses.jsonl   scripted model replies keyed by (task, sha256(paragraph))
  decisions.jsonl        scripted reviewer decisions
  segment/synthetic_171.txt

The output is fully determined by SEED. Re-running overwrites the files.
"""

import hashlib
import json
import random
from datetime import datetime, timedelta, timezone
from pathlib import Path

SEED = 20230521
ROOT = Path(__file__).resolve().parent.parent
TOPICS = [t["topic_id"] for t in json.loads((ROOT.parent / "prompts" / "topics.json").read_text())["topics"]]

LEADERS = [
    {"id": "mitsotakis", "full_name": "Kyriakos Mitsotakis",
     "role_description": "the Greek Prime Minister and President of New Democracy",
     "party": "New Democracy", "aliases": ["K. Mitsotakis"]},
    {"id": "tsipras", "full_name": "Alexis Tsipras",
     "role_description": "a Greek politician and leader of the opposition party SYRIZA (Coalition of the Radical Left)",
     "party": "SYRIZA", "aliases": ["A. Tsipras"]},
    {"id": "androulakis", "full_name": "Nikos Androulakis",
     "role_description": "President of PASOK-Movement for Change",
     "party": "PASOK-Movement for Change", "aliases": ["PASOK", "N. Androulakis"]},
    {"id": "velopoulos", "full_name": "Kyriakos Velopoulos",
     "role_description": "President of Greek Solution",
     "party": "Greek Solution", "aliases": ["K. Velopoulos"]},
]

REVIEWERS = [
    {"id": "adm-eleni", "display_name": "Eleni (adjudicator)", "role": "admin"},
    {"id": "j-anna", "display_name": "Anna", "role": "journalist"},
    {"id": "j-nikos", "display_name": "Nikos", "role": "journalist"},
    {"id": "ps-antonis", "display_name": "Antonis", "role": "political_scientist"},
]

# (id, leader, period, date, venue, kind, duration, paragraphs)
SPEECHES = [
    ("s001", "mitsotakis", "first", "2023-04-28", "Thessaloniki", "campaign_speech", 42, 20),
    ("s002", "mitsotakis", "first", "2023-05-12", "Patras", "campaign_speech", 35, 19),
    ("s003", "mitsotakis", "second", "2023-06-16", "Athens", "campaign_speech", 38, 21),
    ("s004", "tsipras", "first", "2023-04-30", "Heraklion", "campaign_speech", 47, 20),
    ("s005", "tsipras", "first", "2023-05-15", "Larissa", "campaign_speech", 40, 22),
    ("s006", "tsipras", "second", "2023-06-10", "Volos", "campaign_speech", 33, 18),
    ("s007", "tsipras", "second", "2023-06-22", "Athens", "campaign_speech", 51, 20),
    ("s008", "androulakis", "first", "2023-05-03", "Chania", "campaign_speech", 29, 20),
    ("s009", "androulakis", "first", "2023-05-17", "Ioannina", "campaign_speech", 31, 19),
    ("s010", "androulakis", "second", "2023-06-19", "Kalamata", "campaign_speech", 12, 21),
    ("s011", "velopoulos", "first", "2023-05-08", "Thessaloniki", "press_conference_remarks", None, 20),
    ("s012", "velopoulos", "second", "2023-06-14", "Athens", "press_conference_remarks", None, 20),
]

AGENDA_PROB = {"mitsotakis": 0.85, "tsipras": 0.5, "androulakis": 0.6, "velopoulos": 0.3}
FAVOURITE_TOPICS = {
    "mitsotakis": ["healthcare", "economy", "employment", "migration", "national_security"],
    "tsipras": ["economy", "healthcare", "accountability", "corruption", "democracy"],
    "androulakis": ["economy", "social_welfare", "education", "healthcare", "elections"],
    "velopoulos": ["national_security", "migration", "foreign_policy", "elections", "defence"],
}

GAZETTEER = [
    ("SYRIZA", "political_party"), ("New Democracy", "political_party"), ("PASOK", "political_party"),
    ("Athens", "location"), ("Thessaloniki", "location"), ("Crete", "location"),
    ("Greece", "country"), ("Turkey", "country"), ("Germany", "country"),
    ("European Union", "organization"), ("IMF", "organization"), ("Bank of Greece", "organization"),
    ("Alexis Tsipras", "individual"), ("Kyriakos Mitsotakis", "individual"),
    ("farmers", "group"), ("pensioners", "group"), ("young people", "group"),
    ("May 21", "date"), ("June 25", "date"), ("2019", "date"),
]

WORDS = ("we the our country people future plan new strong fair growth support every family region "
         "citizens change work together stability progress trust today tomorrow years program "
         "investment reform opportunity public service policy measures budget promise vision").split()

STANCE_OPENERS = {
    "political_agenda": ["Our program includes", "We propose", "Our plan is clear:", "We commit to"],
    "criticism": ["They failed on", "The government has abandoned", "Our opponents lied about",
                  "For four years they ignored"],
}

INTENSITY_BANDS = ["zero_low", "medium", "high"]
SENTIMENT_BANDS = ["negative", "neutral", "positive"]


def round2(x):
    # half away from zero on the decimal literal
    from decimal import Decimal, ROUND_HALF_UP
    return float(Decimal(repr(x)).quantize(Decimal("0.01"), rounding=ROUND_HALF_UP))


def sentiment_band(x):
    c = round(round2(x) * 100)
    return "negative" if c <= -34 else ("positive" if c >= 34 else "neutral")


def intensity_band(x):
    c = round(round2(x) * 100)
    return "zero_low" if c <= 50 else ("high" if c >= 81 else "medium")


def score_in_band(rng, band, kind):
    if kind == "sentiment":
        lo, hi = {"negative": (-100, -34), "neutral": (-33, 33), "positive": (34, 100)}[band]
    else:
        lo, hi = {"zero_low": (0, 50), "medium": (51, 80), "high": (81, 100)}[band]
    return rng.randint(lo, hi) / 100


def make_paragraph(rng, speech_id, idx, topic, stance, entities):
    opener = rng.choice(STANCE_OPENERS[stance])
    label = topic.replace("_", " ")
    parts = [f"{opener} {label}."]
    for _ in range(rng.randint(2, 5)):
        n = rng.randint(6, 16)
        sentence = " ".join(rng.choice(WORDS) for _ in range(n))
        parts.append(sentence.capitalize() + ".")
    if rng.random() < 0.35:
        parts.append(rng.choice(["We will deliver.", "Will they listen?", "We will not stop.",
                                 "We are willing to work, and we will.", "This is our will."]))
    for surface, _ in entities:
        pos = rng.randint(1, len(parts))
        parts.insert(pos, f"Consider {surface} here.")
    parts.append(f"Marker {speech_id}-{idx:02d}.")
    text = " ".join(parts)
    if rng.random() < 0.2:
        # line-wrapped paragraph: single newlines stay inside the paragraph
        words = text.split(" ")
        cut = len(words) // 2
        text = " ".join(words[:cut]) + "\n" + " ".join(words[cut:])
    return text


def sha(text):
    return hashlib.sha256(text.encode("utf-8")).hexdigest()


def assigned(reviewers, role, k, p):
    pool = sorted(r["id"] for r in reviewers if r["role"] == role)
    return [pool[(p + j) % len(pool)] for j in range(k)]


POLICY = {
    "stance": [("journalist", 2)],
    "topic": [("journalist", 2)],
    "sentiment": [("journalist", 1), ("political_scientist", 1)],
    "polarization": [("journalist", 1), ("political_scientist", 1)],
    "populism": [("journalist", 1), ("political_scientist", 1)],
    "ner": [("journalist", 1)],
}


def main():
    rng = random.Random(SEED)
    out = ROOT / "speeches"
    out.mkdir(parents=True, exist_ok=True)
    (out / "leaders.json").write_text(json.dumps(LEADERS, indent=2, ensure_ascii=False) + "\n")
    (out / "reviewers.json").write_text(json.dumps(REVIEWERS, indent=2, ensure_ascii=False) + "\n")

    manifest = []
    responses = []
    decisions = []
    clock = [datetime(2023, 5, 1, 9, 0, 0, tzinfo=timezone.utc)]

    def stamp():
        clock[0] += timedelta(seconds=17)
        return clock[0].strftime("%Y-%m-%dT%H:%M:%SZ")

    for sid, leader, period, date, venue, kind, duration, npar in SPEECHES:
        rec = {"id": sid, "leader_id": leader, "date": date, "election_period": period,
               "venue": venue, "source": f"https://example.org/press/{sid}",
               "original_language": "en", "kind": kind, "duration_minutes": duration}
        manifest.append(rec)
        paragraphs = []
        for p in range(npar):
            stance = "political_agenda" if rng.random() < AGENDA_PROB[leader] else "criticism"
            if rng.random() < 0.6:
                topic = rng.choice(FAVOURITE_TOPICS[leader])
            else:
                topic = rng.choice(TOPICS)
            ents = rng.sample(GAZETTEER, rng.choice([0, 0, 1, 1, 2, 3]))
            # repeated mentions exercise mention counting
            if ents and rng.random() < 0.25:
                ents = ents + [ents[0]]
            text = make_paragraph(rng, sid, p, topic, stance, ents)
            paragraphs.append(text)
            key = sha(text)

            # human truth
            h_sent_band = rng.choices(SENTIMENT_BANDS, weights=[0.25, 0.35, 0.4])[0]
            h_pol = rng.choices(INTENSITY_BANDS, weights=[0.86, 0.1, 0.04])[0]
            h_pop = rng.choices(INTENSITY_BANDS, weights=[0.94, 0.04, 0.02])[0]

            # machine output
            m_stance = stance if rng.random() < 0.89 else ("criticism" if stance == "political_agenda" else "political_agenda")
            m_topic = topic if rng.random() < 0.62 else rng.choice([t for t in TOPICS if t != topic])
            if rng.random() < 0.94:
                m_sent_band = h_sent_band
            else:
                m_sent_band = rng.choice([b for b in SENTIMENT_BANDS if b != h_sent_band])
            m_sent = score_in_band(rng, m_sent_band, "sentiment")
            # boundary literals that only band correctly after 2-decimal rounding
            if rng.random() < 0.05:
                m_sent = {"negative": -0.335, "neutral": 0.334, "positive": 0.335}[m_sent_band]
            m_pol_band = h_pol if rng.random() < 0.87 else rng.choice([b for b in INTENSITY_BANDS if b != h_pol])
            m_pop_band = h_pop if rng.random() < 0.9 else rng.choice([b for b in INTENSITY_BANDS if b != h_pop])
            m_pol = score_in_band(rng, m_pol_band, "intensity")
            m_pop = score_in_band(rng, m_pop_band, "intensity")
            if m_pol_band == "zero_low" and rng.random() < 0.5:
                m_pol = round(rng.randint(0, 15) / 100, 2)
            if m_pop_band == "zero_low" and rng.random() < 0.6:
                m_pop = 0.0
            true_ents = [{"surface": s, "type": t} for s, t in ents]
            m_ents = list(true_ents)
            if m_ents and rng.random() < 0.1:
                m_ents = m_ents[:-1]
            elif rng.random() < 0.05:
                m_ents = m_ents + [{"surface": "Europe", "type": "location"}]

            machine = {
                "stance": {"stance": m_stance},
                "topic": {"topic": m_topic},
                "sentiment": {"score": m_sent},
                "polarization": {"score": m_pol},
                "populism": {"score": m_pop},
                "ner": {"entities": m_ents},
            }
            for task, obj in machine.items():
                body = json.dumps(obj, ensure_ascii=False)
                if rng.random() < 0.1:
                    body = "```json\n" + body + "\n```"
                responses.append({"task": task, "text_sha256": key, "response": body})

            truth = {
                "stance": (m_stance == stance, stance),
                "topic": (m_topic == topic, topic),
                "sentiment": (m_sent_band == h_sent_band, h_sent_band),
                "polarization": (m_pol_band == h_pol, h_pol),
                "populism": (m_pop_band == h_pop, h_pop),
                "ner": (m_ents == true_ents, true_ents),
            }
            wrong_alt = {
                "stance": lambda v: "criticism" if v == "political_agenda" else "political_agenda",
                "topic": lambda v: rng.choice([t for t in TOPICS if t != v]),
                "sentiment": lambda v: rng.choice([b for b in SENTIMENT_BANDS if b != v]),
                "polarization": lambda v: rng.choice([b for b in INTENSITY_BANDS if b != v]),
                "populism": lambda v: rng.choice([b for b in INTENSITY_BANDS if b != v]),
                "ner": lambda v: v + [{"surface": "Brussels", "type": "location"}],
            }
            machine_label = {
                "stance": m_stance, "topic": m_topic, "sentiment": m_sent_band,
                "polarization": m_pol_band, "populism": m_pop_band, "ner": m_ents,
            }
            for task, (ok, human) in truth.items():
                revs = []
                for role, k in POLICY[task]:
                    revs += assigned(REVIEWERS, role, k, p)

                def dec(rid, verdict, value=None):
                    d = {"schema_version": 1, "speech_id": sid, "paragraph_index": p, "task": task,
                         "reviewer_id": rid, "verdict": verdict, "submitted_at": stamp()}
                    if verdict == "correct":
                        d["corrected_value"] = value
                    decisions.append(d)

                roll = rng.random()
                if len(revs) > 1 and roll < 0.04:
                    # reviewers disagree; adjudicator rules for the truth
                    if ok:
                        dec(revs[0], "accept")
                        dec(revs[1], "correct", wrong_alt[task](human))
                        dec("adm-eleni", "accept")
                    else:
                        dec(revs[0], "correct", human)
                        dec(revs[1], "accept")
                        dec("adm-eleni", "correct", human)
                    continue
                if roll > 0.97:
                    # double submission, last write wins
                    if ok:
                        dec(revs[0], "correct", wrong_alt[task](machine_label[task]))
                    else:
                        dec(revs[0], "accept")
                for rid in revs:
                    if ok:
                        dec(rid, "accept")
                    else:
                        dec(rid, "correct", human)

        body = ""
        for i, text in enumerate(paragraphs):
            body += text
            if i + 1 < len(paragraphs):
                body += rng.choice(["\n\n", "\n\n", "\n\n\n", "\n  \n"])
        body += "\n"
        (out / f"{sid}.txt").write_text(body, encoding="utf-8")

    (out / "manifest.json").write_text(json.dumps(manifest, indent=2, ensure_ascii=False) + "\n")
    with open(ROOT / "stub_responses.jsonl", "w", encoding="utf-8") as f:
        for r in responses:
            f.write(json.dumps(r, ensure_ascii=False) + "\n")
    with open(ROOT / "decisions.jsonl", "w", encoding="utf-8") as f:
        for d in decisions:
            f.write(json.dumps(d, ensure_ascii=False) + "\n")

    # 171-line synthetic document with 40 blank-line runs
    seg_rng = random.Random(SEED + 1)
    run_lengths = [seg_rng.choice([1, 1, 2, 3]) for _ in range(40)]
    text_lines = 171 - sum(run_lengths)
    groups = [1] * 41
    for _ in range(text_lines - 41):
        groups[seg_rng.randrange(41)] += 1
    lines = []
    for g, size in enumerate(groups):
        for _ in range(size):
            lines.append(" ".join(seg_rng.choice(WORDS) for _ in range(seg_rng.randint(3, 9))))
        if g < 40:
            lines += [seg_rng.choice(["", "   ", "\t"]) for _ in range(run_lengths[g])]
    assert len(lines) == 171
    (ROOT / "segment" / "synthetic_171.txt").write_text("\n".join(lines) + "\n", encoding="utf-8")


if __name__ == "__main__":
    main()
