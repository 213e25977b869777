// Generic form renderer: desk-scale tasks describe their payload shape in
// task_config.json's payload_schema and need no custom front-end code.

export interface FieldSpec {
  name: string;
  label?: string;
  type?: "text" | "textarea" | "number" | "checkbox" | "select";
  options?: string[];
  required?: boolean;
}

export interface PayloadSchema {
  fields?: FieldSpec[];
}

const FREEFORM: FieldSpec = { name: "response", label: "Response", type: "textarea" };

export function schemaFields(schema: PayloadSchema | null | undefined): FieldSpec[] {
  const fields = schema?.fields;
  return Array.isArray(fields) && fields.length > 0 ? fields : [FREEFORM];
}

export function buildForm(
  schema: PayloadSchema | null | undefined,
  container: HTMLElement,
  initial: Record<string, unknown> = {},
): void {
  container.innerHTML = "";
  for (const field of schemaFields(schema)) {
    const wrapper = document.createElement("label");
    wrapper.className = "field";
    const caption = document.createElement("span");
    caption.textContent = field.label ?? field.name;
    wrapper.appendChild(caption);
    let input: HTMLInputElement | HTMLTextAreaElement | HTMLSelectElement;
    switch (field.type) {
      case "textarea":
        input = document.createElement("textarea");
        break;
      case "select": {
        const select = document.createElement("select");
        for (const option of field.options ?? []) {
          const element = document.createElement("option");
          element.value = option;
          element.textContent = option;
          select.appendChild(element);
        }
        input = select;
        break;
      }
      case "checkbox":
        input = document.createElement("input");
        (input as HTMLInputElement).type = "checkbox";
        break;
      case "number":
        input = document.createElement("input");
        (input as HTMLInputElement).type = "number";
        break;
      default:
        input = document.createElement("input");
        (input as HTMLInputElement).type = "text";
    }
    input.name = field.name;
    if (field.required) {
      input.required = true;
    }
    const existing = initial[field.name];
    if (existing !== undefined && existing !== null) {
      if (field.type === "checkbox") {
        (input as HTMLInputElement).checked = Boolean(existing);
      } else {
        input.value = String(existing);
      }
    }
    wrapper.appendChild(input);
    container.appendChild(wrapper);
  }
}

export function readForm(
  schema: PayloadSchema | null | undefined,
  container: HTMLElement,
): Record<string, unknown> {
  const result: Record<string, unknown> = {};
  for (const field of schemaFields(schema)) {
    const input = container.querySelector<HTMLInputElement>(`[name="${field.name}"]`);
    if (!input) {
      continue;
    }
    if (field.type === "checkbox") {
      result[field.name] = input.checked;
    } else if (field.type === "number") {
      result[field.name] = input.value === "" ? null : Number(input.value);
    } else {
      result[field.name] = input.value;
    }
  }
  return result;
}
