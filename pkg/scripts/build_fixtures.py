#!/usr/bin/env python3
"""Regenerate the shipped fixture world under src/dermflow/data/fixtures/.

Everything is seeded; rerunning produces byte-identical files.
"""

import json
from pathlib import Path

import numpy as np

ROOT = Path(__file__).resolve().parents[1]
DATA = ROOT / "src" / "dermflow" / "data"
OUT = DATA / "fixtures"
DIM = 512
SEED = 20240611

DIAG_Q = "What disease is shown in this image?"
CONCEPT_Q = "Annotate the dermoscopic concepts present."
CAPTION_Q = "Describe this lesion in a clinical caption."
DESCRIBE = "describe the lesion"


def taxonomy():
    doc = json.loads((DATA / "taxonomy.json").read_text())
    paths = {}

    def walk(node, trail):
        trail = trail + [node["name"]]
        paths[node["name"]] = trail
        for c in node.get("children", []):
            walk(c, trail)

    walk(doc, [])
    leaves = []

    def leaf(node):
        if not node.get("children"):
            leaves.append(node["name"])
        for c in node.get("children", []):
            leaf(c)

    leaf(doc)
    return paths, leaves


FEATURES = [l.strip() for l in (DATA / "concepts.txt").read_text().splitlines()
            if l.strip() and not l.startswith("#")]

# image -> profile. "panderm": full-taxonomy top-1 and score; "cases": (label, sim) neighbours;
# "refined": classifier answer for the conflict pair; "concepts": features scored >= 0.5.
IMAGES = {
    "ga_dorsal_hand": dict(
        truth="granuloma annulare",
        panderm=("eczema", 1.00),
        cases=[("granuloma annulare", s) for s in (0.86, 0.84, 0.79, 0.76)],
        refined=("granuloma annulare", 1.00),
        describe="Red lesion with an elevated margin on the back of the hand. An annular plaque "
                 "with a slightly scaly rim; overall appearance suggests eczema.",
        concepts=["erythema", "annular configuration", "raised border", "plaque"],
        caption="Granuloma annulare on the back of the hand: a red annular plaque with a firm "
                "elevated edge and central clearing.",
    ),
    "img01": dict(
        truth="melanoma", panderm=("melanoma", 0.93),
        cases=[("melanoma", s) for s in (0.88, 0.85, 0.83, 0.81)],
        describe="Asymmetric pigmented lesion with irregular borders and multiple colours.",
        concepts=["atypical pigment network", "blue-whitish veil", "streaks", "regression structures"],
        caption="Asymmetric pigmented lesion with irregular borders, atypical network and blue-white "
                "veil, consistent with melanoma.",
    ),
    "img02": dict(
        truth="melanocytic nevus", panderm=("melanocytic nevus", 0.95),
        cases=[("melanocytic nevus", 0.84), ("melanocytic nevus", 0.82), ("melanoma", 0.80),
               ("melanocytic nevus", 0.78)],
        describe="Small symmetric brown macule with a regular outline.",
        concepts=["pigment network", "dots and globules"],
        caption="Symmetric brown lesion with a regular pigment network and even globules, a benign "
                "melanocytic nevus.",
    ),
    "img03": dict(
        truth="basal cell carcinoma", panderm=("basal cell carcinoma", 0.86),
        cases=[("basal cell carcinoma", s) for s in (0.86, 0.83, 0.80, 0.79)],
        describe="Pearly papule with arborizing vessels and a small central ulcer.",
        concepts=["vascular structures", "ulceration", "papule"],
        caption="Pearly translucent papule with arborizing vessels and central ulceration, typical of "
                "basal cell carcinoma.",
    ),
    "img04": dict(
        truth="psoriasis", panderm=("eczema", 0.91),
        cases=[("psoriasis", s) for s in (0.83, 0.80, 0.78, 0.77)],
        refined=("psoriasis", 0.97),
        describe="Well-demarcated erythematous plaque with thick silvery scale on the elbow.",
        concepts=["erythema", "scale", "plaque"],
        caption="Sharply demarcated red plaque with silvery scale on the extensor elbow, psoriasis.",
    ),
    "img05": dict(
        truth="granuloma annulare", panderm=("tinea corporis", 0.92),
        cases=[("granuloma annulare", 0.85), ("granuloma annulare", 0.82), ("tinea corporis", 0.80),
               ("granuloma annulare", 0.77)],
        refined=("granuloma annulare", 0.94),
        describe="Ring of skin-coloured papules without scale on the dorsum of the foot.",
        concepts=["annular configuration", "papule", "raised border", "central clearing"],
        caption="Annular ring of smooth papules with central clearing and no scale, granuloma annulare.",
    ),
    "img06": dict(
        truth="seborrheic keratosis", panderm=("seborrheic keratosis", 0.97),
        cases=[("seborrheic keratosis", s) for s in (0.90, 0.88, 0.87, 0.85)],
        describe="Stuck-on waxy brown plaque with a verrucous surface.",
        concepts=["plaque", "dots and globules"],
        caption="Waxy stuck-on brown plaque with milia-like cysts, seborrheic keratosis.",
    ),
    "img07": dict(
        truth="tinea corporis", panderm=("tinea corporis", 0.90),
        cases=[("tinea corporis", 0.82), ("eczema", 0.79), ("tinea corporis", 0.78), ("eczema", 0.73)],
        describe="Annular scaly plaque with an active advancing border on the trunk.",
        concepts=["annular configuration", "scale", "raised border", "erythema"],
        caption="Annular scaly red plaque with an advancing border and central clearing, tinea corporis.",
    ),
    "img08": dict(
        truth="vitiligo", panderm=("vitiligo", 0.99),
        cases=[("vitiligo", s) for s in (0.92, 0.90, 0.89, 0.88)],
        describe="Depigmented milk-white patches with sharp margins around the mouth.",
        concepts=[],
        caption="Sharply marginated depigmented white patches around the mouth, vitiligo.",
    ),
    "img09": dict(
        truth="urticaria", panderm=("urticaria", 0.78),
        cases=[("urticaria", s) for s in (0.75, 0.72, 0.70, 0.69)],
        describe="Transient raised pink wheals of varying size on the back.",
        concepts=["erythema", "plaque"],
        caption="Multiple pink raised wheals on the back, urticaria.",
    ),
    "img10": dict(
        truth="eczema", panderm=("psoriasis", 0.88),
        cases=[("eczema", s) for s in (0.84, 0.81, 0.80, 0.78)],
        refined=("eczema", 0.91),
        describe="Ill-defined red scaly patches with excoriation in the antecubital fossa.",
        concepts=["erythema", "scale", "crust"],
        caption="Poorly defined red scaly patches with excoriations and crust in the elbow folds, eczema.",
    ),
}

GUIDELINES = {
    "granuloma annulare": [
        ("Clinical features", "Granuloma annulare presents as annular plaques of skin-coloured or "
         "erythematous papules with raised borders and central clearing, commonly on the dorsal hands "
         "and feet. Unlike tinea there is no surface scale."),
        ("Diagnosis", "Diagnosis of granuloma annulare is clinical; biopsy shows palisading granulomas "
         "with mucin. The differential includes tinea corporis, eczema and sarcoidosis."),
        ("Treatment", "Localized granuloma annulare often resolves spontaneously; potent topical or "
         "intralesional corticosteroids may hasten clearance."),
    ],
    "eczema": [
        ("Clinical features", "Eczema (atopic dermatitis) causes itchy, ill-defined erythematous, scaly "
         "patches with excoriation and lichenification, favouring flexures."),
        ("Treatment", "Eczema is managed with emollients, avoidance of irritants and topical "
         "corticosteroids during flares."),
    ],
    "psoriasis": [
        ("Clinical features", "Plaque psoriasis produces well-demarcated erythematous plaques with thick "
         "silvery scale on extensor surfaces such as elbows and knees."),
        ("Treatment", "Psoriasis treatment ranges from topical corticosteroids and vitamin D analogues to "
         "phototherapy and systemic agents."),
    ],
    "melanoma": [
        ("Clinical features", "Melanoma is suggested by asymmetry, border irregularity, colour variation, "
         "diameter over 6 mm and evolution. Dermoscopy may show an atypical pigment network, streaks "
         "and a blue-whitish veil."),
        ("Management", "Suspected melanoma requires excision biopsy with narrow margins and "
         "histological staging."),
    ],
    "melanocytic nevus": [
        ("Clinical features", "A benign melanocytic nevus is a symmetric, evenly pigmented macule or "
         "papule with a regular pigment network and globules."),
    ],
    "basal cell carcinoma": [
        ("Clinical features", "Basal cell carcinoma appears as a pearly papule with rolled edges, "
         "arborizing telangiectatic vessels and sometimes central ulceration."),
        ("Treatment", "Surgical excision is the standard treatment for basal cell carcinoma."),
    ],
    "seborrheic keratosis": [
        ("Clinical features", "Seborrheic keratosis is a benign stuck-on waxy plaque with milia-like "
         "cysts and comedo-like openings."),
    ],
    "tinea corporis": [
        ("Clinical features", "Tinea corporis (ringworm) forms annular scaly plaques with an active "
         "advancing border and central clearing. Scrapings show fungal hyphae."),
        ("Treatment", "Tinea corporis responds to topical azole or allylamine antifungals."),
    ],
    "vitiligo": [
        ("Clinical features", "Vitiligo causes depigmented milk-white macules and patches with sharp "
         "margins, often periorificial and acral."),
    ],
    "urticaria": [
        ("Clinical features", "Urticaria consists of transient itchy wheals that resolve within 24 hours "
         "without leaving marks."),
    ],
}


def slug(s):
    return "-".join("".join(ch if ch.isalnum() else " " for ch in s.lower()).split())


def unit(v):
    return v / np.linalg.norm(v)


def orth_unit(rng, base):
    u = rng.standard_normal(DIM)
    u -= (u @ base) * base
    return unit(u)


def main():
    rng = np.random.default_rng(SEED)
    paths, leaves = taxonomy()
    (OUT / "images").mkdir(parents=True, exist_ok=True)
    (OUT / "manifests").mkdir(parents=True, exist_ok=True)

    fixtures, cases = [], []
    for name, profile in IMAGES.items():
        img = f"{name}.img"
        (OUT / "images" / img).write_bytes(f"DERMFLOW FIXTURE IMAGE {name}\n".encode())

        v = unit(rng.standard_normal(DIM))
        fixtures.append({"tool_id": "dermlip_embed", "image_ref": img, "params": {},
                         "result": {"embedding": [round(float(x), 7) for x in v]}})
        for j, (label, sim) in enumerate(profile["cases"]):
            e = sim * v + np.sqrt(1 - sim * sim) * orth_unit(rng, v)
            cases.append({
                "id": f"case-{name}-{j}",
                "embedding": [round(float(x), 7) for x in e],
                "disease_label": label,
                "category_path": paths[label][1:],
                "description": f"Diagnosed {label}; archive case similar to {name}.",
            })

        top, score = profile["panderm"]
        others = [l for l in leaves if l != top]
        rng.shuffle(others)
        rest = round(1.0 - score, 4)
        preds = [{"label": top, "score": score}]
        if rest > 0:
            preds += [{"label": others[0], "score": round(rest * 0.6, 4)},
                      {"label": others[1], "score": round(rest * 0.3, 4)}]
        fixtures.append({"tool_id": "panderm", "image_ref": img, "params": {"candidates": leaves},
                         "result": preds})
        if "refined" in profile:
            case_major = profile["truth"]
            pair = sorted({top, case_major})
            label, s = profile["refined"]
            other = [p for p in pair if p != label][0]
            fixtures.append({"tool_id": "panderm", "image_ref": img, "params": {"candidates": pair},
                             "result": [{"label": label, "score": s},
                                        {"label": other, "score": round(1.0 - s, 4)}]})

        scores = {}
        for f in FEATURES:
            hi = f in profile["concepts"]
            scores[f] = round(float(rng.uniform(0.55, 0.95) if hi else rng.uniform(0.02, 0.45)), 3)
        fixtures.append({"tool_id": "make", "image_ref": img, "params": {"features": FEATURES},
                         "result": {"scores": scores}})

        for q in (DESCRIBE, DIAG_Q, CONCEPT_Q, CAPTION_Q):
            text = profile["describe"]
            if q == DIAG_Q:
                text += f" Most consistent with {profile['panderm'][0]}."
            fixtures.append({"tool_id": "dermo_gpt", "image_ref": img, "params": {"question": q},
                             "result": {"text": text}})
        fixtures.append({"tool_id": "qwen_vl", "image_ref": img, "params": {"question": DESCRIBE},
                         "result": {"text": profile["describe"]}})

    # distractor cases spread across the taxonomy
    for j in range(40):
        label = leaves[j % len(leaves)]
        e = unit(rng.standard_normal(DIM))
        cases.append({
            "id": f"case-archive-{j:03d}",
            "embedding": [round(float(x), 7) for x in e],
            "disease_label": label,
            "category_path": paths[label][1:],
            "description": f"Archive case of {label}.",
        })

    chunks = []
    for disease, sections in GUIDELINES.items():
        for section, text in sections:
            chunks.append({
                "id": f"gl-{slug(disease)}-{slug(section)}",
                "text": text,
                "disease_names": [disease],
                "section": section,
                "source_url": f"https://guidelines.example.org/{slug(disease)}#{slug(section)}",
            })

    def write_jsonl(path, rows):
        path.write_text("".join(json.dumps(r, sort_keys=True) + "\n" for r in rows))

    write_jsonl(OUT / "tools.jsonl", fixtures)
    write_jsonl(OUT / "cases.jsonl", cases)
    write_jsonl(OUT / "guidelines.jsonl", chunks)

    manifest_imgs = [n for n in IMAGES if n != "ga_dorsal_hand"]
    write_jsonl(OUT / "manifests" / "diagnosis.jsonl",
                [{"image_ref": f"../images/{n}.img", "question": DIAG_Q, "gold": IMAGES[n]["truth"]}
                 for n in manifest_imgs])
    write_jsonl(OUT / "manifests" / "concept.jsonl",
                [{"image_ref": f"../images/{n}.img", "question": CONCEPT_Q, "gold": IMAGES[n]["concepts"]}
                 for n in manifest_imgs])
    write_jsonl(OUT / "manifests" / "caption.jsonl",
                [{"image_ref": f"../images/{n}.img", "question": CAPTION_Q, "gold": IMAGES[n]["caption"]}
                 for n in manifest_imgs])
    print(f"{len(fixtures)} tool fixtures, {len(cases)} cases, {len(chunks)} guideline chunks")


if __name__ == "__main__":
    main()
