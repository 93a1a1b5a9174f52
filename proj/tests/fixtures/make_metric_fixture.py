"""Regenerates metric_fixture.json with the COCO caption evaluation toolkit.

Captions only use lowercase-able words, commas and a final period, so the
toolkit's PTB tokenization reduces to: lowercase, drop punctuation, split on
whitespace. That step is done here because the Java tokenizer is not needed
for such input; the scorers themselves run unchanged.
"""
import json
import re
import sys

from pycocoevalcap.bleu.bleu import Bleu
from pycocoevalcap.cider.cider import Cider
from pycocoevalcap.rouge.rouge import Rouge

ITEMS = [
    ("a man riding a wave on top of a surfboard.",
     ["A man riding a wave on a surfboard.", "A surfer rides a large wave in the ocean.",
      "A person on a surfboard riding a wave."]),
    ("a plate of food with broccoli and rice.",
     ["A plate topped with rice and broccoli.", "A white plate holds chicken, rice and broccoli.",
      "Food on a plate including broccoli."]),
    ("a cat sitting on a laptop keyboard.",
     ["A cat laying on top of a laptop computer.", "A cat sits on the keys of a laptop.",
      "An orange cat resting on an open laptop.", "A kitten on a keyboard."]),
    ("two giraffes standing next to a tree.",
     ["Two giraffes stand near a tall tree.", "A pair of giraffes eating leaves from a tree."]),
    ("a red double decker bus on a city street.",
     ["A red double decker bus driving down a street.", "A double decker bus in the city.",
      "A big red bus on the road."]),
    ("a group of people flying kites in a park.",
     ["People flying kites on a grassy field.", "Several kites fly over a park full of people.",
      "A crowd of people with kites outside."]),
    ("a bathroom with a toilet and a sink.",
     ["A white toilet next to a sink in a bathroom.", "A small bathroom with a sink and toilet.",
      "A clean bathroom."]),
    ("a dog catching a frisbee in the air.",
     ["A dog jumps to catch a frisbee.", "A brown dog leaps for a flying disc.",
      "The dog is catching a frisbee in a field."]),
    ("a train traveling down the tracks.",
     ["A passenger train moving along the tracks.", "A long train on railroad tracks.",
      "A train pulling into a station."]),
    ("a woman holding an umbrella in the rain.",
     ["A woman walks with an umbrella in the rain.", "A lady holding a black umbrella.",
      "A person under an umbrella on a rainy day."]),
    ("a kitchen with a stove and a refrigerator.",
     ["A kitchen with white appliances.", "A stove and refrigerator in a small kitchen.",
      "A kitchen that has a refrigerator, stove and sink."]),
    ("a baseball player swinging a bat.",
     ["A batter swings at a pitch.", "A baseball player swinging his bat at the ball.",
      "A man playing baseball at home plate."]),
    ("a bowl of fruit on a table.",
     ["A bowl filled with apples and oranges.", "Fruit in a bowl on a wooden table."]),
    ("a man on a skateboard doing a trick.",
     ["A skateboarder performs a trick on a ramp.", "A man doing a trick on his skateboard.",
      "A young man skateboarding."]),
    ("an airplane flying in the blue sky.",
     ["A jet airplane flying through a clear blue sky.", "A plane in the sky.",
      "A large passenger jet flying overhead."]),
    ("a pizza with cheese and tomatoes.",
     ["A pizza topped with cheese and tomato slices.", "A cheese pizza on a pan.",
      "A whole pizza with tomatoes and basil."]),
    ("a clock tower in the middle of a city.",
     ["A tall clock tower in a city.", "A tower with a clock on top near buildings.",
      "A clock tower stands over the town."]),
    ("elephants walking in a line on the grass.",
     ["A herd of elephants walking across a field.", "Three elephants walking in the grass.",
      "Elephants walk together in a grassy area."]),
    ("a person riding a horse on a beach.",
     ["A woman riding a horse along the beach.", "A horse and rider on the sand near the ocean."]),
    ("a stop sign on the corner of a street.",
     ["A red stop sign on a street corner.", "A stop sign next to a road.",
      "A stop sign at an intersection."]),
]


def tok(s):
    return " ".join(re.sub(r"[.,]", " ", s.lower()).split())


def main(out_path):
    cands = {f"img{i:02d}": c for i, (c, _) in enumerate(ITEMS)}
    refs = {f"img{i:02d}": r for i, (_, r) in enumerate(ITEMS)}
    res = {k: [tok(v)] for k, v in cands.items()}
    gts = {k: [tok(x) for x in v] for k, v in refs.items()}
    bleu, _ = Bleu(4).compute_score(gts, res)
    rouge, _ = Rouge().compute_score(gts, res)
    cider, cider_per = Cider().compute_score(gts, res)
    keys = sorted(gts.keys())
    fixture = {
        "candidates": cands,
        "references": refs,
        "expected": {
            "BLEU-1": bleu[0], "BLEU-2": bleu[1], "BLEU-3": bleu[2], "BLEU-4": bleu[3],
            "ROUGE-L": rouge, "CIDEr": cider,
            "CIDEr_per_image": {k: float(v) for k, v in zip(keys, cider_per)},
        },
    }
    with open(out_path, "w") as f:
        json.dump(fixture, f, indent=1, sort_keys=True)
        f.write("\n")


if __name__ == "__main__":
    main(sys.argv[1] if len(sys.argv) > 1 else "metric_fixture.json")
