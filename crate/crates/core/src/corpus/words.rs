//! Class names, reference class sizes, and the invented caption vocabulary.
//!
//! The 33 design-patent classes carry their US design class descriptions and
//! the occurrence counts used to rank them from head to tail. Nouns and
//! function phrases are made up; they only need to correlate with the class.

pub(crate) struct ClassEntry {
    pub name: &'static str,
    pub occurrences: u32,
    pub nouns: [&'static str; 3],
    pub function: &'static str,
}

macro_rules! class {
    ($name:expr, $occ:expr, [$a:expr, $b:expr, $c:expr], $f:expr) => {
        ClassEntry {
            name: $name,
            occurrences: $occ,
            nouns: [$a, $b, $c],
            function: $f,
        }
    };
}

pub(crate) const DESIGN_CLASSES: [ClassEntry; 33] = [
    class!("Edible Products", 38, ["biscuit", "candy bar", "pet treat"], "eating and snacking"),
    class!("Apparel and Haberdashery", 930, ["jacket", "shoe sole", "belt buckle"], "wearing and dressing"),
    class!("Travel Goods, Personal Belongings, and Storage or Carrying Articles", 462, ["suitcase", "backpack", "wallet"], "carrying personal belongings"),
    class!("Brushware", 122, ["toothbrush", "hair brush", "scrub brush"], "brushing and scrubbing"),
    class!("Textile or Paper Yard Goods; Sheet Material", 20, ["fabric sheet", "wallpaper", "paper towel"], "covering surfaces"),
    class!("Furnishings", 1052, ["armchair", "table", "bookshelf"], "furnishing living spaces"),
    class!("Equipment for Preparing or Serving Food or Drink Not Elsewhere Specified", 906, ["kettle", "blender", "serving tray"], "preparing food and drink"),
    class!("Tools and Hardware", 735, ["wrench", "hinge", "drill bit"], "fastening and repairing"),
    class!("Packages and Containers for Goods", 525, ["bottle", "carton", "jar"], "packaging goods"),
    class!("Measuring, Testing or Signaling Instruments", 444, ["gauge", "thermometer", "sensor housing"], "measuring and signaling"),
    class!("Jewelry, Symbolic Insignia, and Ornaments", 369, ["pendant", "ring", "brooch"], "personal ornament"),
    class!("Transportation", 1261, ["vehicle wheel", "bicycle frame", "car grille"], "moving people and cargo"),
    class!("Equipment for Production, Distribution, or Transformation of Energy", 755, ["battery pack", "charger", "solar panel"], "supplying electric power"),
    class!("Recording, Communication, or Information Retrieval Equipment", 1943, ["smartphone", "speaker", "display screen"], "communicating information"),
    class!("Machines Not Elsewhere Specified", 512, ["pump", "robot arm", "conveyor unit"], "automated processing"),
    class!("Photography and Optical Equipment", 359, ["camera body", "lens hood", "eyeglass frame"], "capturing images"),
    class!("Musical Instruments", 35, ["guitar body", "drum pad", "keyboard stand"], "playing music"),
    class!("Printing and Office Machinery", 55, ["printer", "label maker", "shredder"], "printing documents"),
    class!("Office Supplies; Artists' and Teachers' Materials", 146, ["stapler", "pen", "easel"], "writing and drawing"),
    class!("Sales and Advertising Equipment", 39, ["sign board", "display stand", "price tag holder"], "advertising products"),
    class!("Games, Toys and Sports Goods", 962, ["toy figure", "ball", "game controller"], "playing games and sports"),
    class!("Arms, Pyrotechnics, Hunting and Fishing Equipment", 184, ["fishing reel", "target", "decoy"], "hunting and fishing"),
    class!("Environmental Heating and Cooling, Fluid Handling and Sanitary Equipment", 743, ["faucet", "fan", "heater"], "controlling air and water"),
    class!("Medical and Laboratory Equipment", 1044, ["syringe", "inhaler", "test tube rack"], "medical treatment"),
    class!("Building Units and Construction Elements", 179, ["brick", "roof tile", "beam connector"], "building structures"),
    class!("Lighting", 901, ["lamp", "light bulb", "lantern"], "providing illumination"),
    class!("Tobacco and Smokers' Supplies", 136, ["pipe", "lighter", "ashtray"], "smoking"),
    class!("Cosmetic Products and Toilet Articles", 329, ["compact case", "razor", "soap dish"], "personal grooming"),
    class!("Equipment for Safety, Protection and Rescue", 80, ["helmet", "safety vest", "fire extinguisher"], "protecting people"),
    class!("Animal Husbandry", 347, ["pet bowl", "bird feeder", "leash"], "caring for animals"),
    class!("Washing, Cleaning or Drying Machines", 221, ["washing machine", "vacuum cleaner", "dryer"], "cleaning and drying"),
    class!("Material or Article Handling Equipment", 127, ["hand truck", "hook", "pallet"], "moving materials"),
    class!("Miscellaneous", 26, ["gadget", "fixture", "accessory"], "general use"),
];

pub(crate) const ADJECTIVES: [&str; 12] = [
    "compact", "modular", "ergonomic", "portable", "foldable", "rounded", "slim",
    "reinforced", "decorative", "adjustable", "stackable", "angular",
];

pub(crate) const SIZE_WORDS: [&str; 3] = ["small", "medium", "large"];

pub(crate) const COUNT_WORDS: [&str; 7] = ["zero", "one", "two", "three", "four", "five", "six"];

/// Class names for `n_classes`: the design classes when there are exactly 33,
/// numbered generic classes otherwise.
pub(crate) fn class_names(n_classes: usize) -> Vec<String> {
    if n_classes == DESIGN_CLASSES.len() {
        DESIGN_CLASSES.iter().map(|c| c.name.to_string()).collect()
    } else {
        (0..n_classes).map(|c| format!("Design Class {}", c + 1)).collect()
    }
}

/// Class ids ordered from most to least frequent.
pub(crate) fn frequency_rank(n_classes: usize) -> Vec<usize> {
    let mut order: Vec<usize> = (0..n_classes).collect();
    if n_classes == DESIGN_CLASSES.len() {
        order.sort_by_key(|&c| std::cmp::Reverse(DESIGN_CLASSES[c].occurrences));
    }
    order
}

pub(crate) fn class_nouns(class_id: usize, n_classes: usize) -> Vec<String> {
    if n_classes == DESIGN_CLASSES.len() {
        DESIGN_CLASSES[class_id].nouns.iter().map(|s| s.to_string()).collect()
    } else {
        ["article", "device", "unit"]
            .iter()
            .map(|n| format!("type {} {n}", class_id + 1))
            .collect()
    }
}

pub(crate) fn class_function(class_id: usize, n_classes: usize) -> String {
    if n_classes == DESIGN_CLASSES.len() {
        DESIGN_CLASSES[class_id].function.to_string()
    } else {
        format!("purpose {}", class_id + 1)
    }
}
